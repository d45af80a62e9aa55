"""Train the default recipe on a benign trace and replay a mixed one, over several seeds.

    python3 scripts/run_recipe.py --seeds 0 1 2 3 4 5
"""

import argparse
import time

from burstwall.config import Config
from burstwall.controller import Controller
from burstwall.metrics import evaluate
from burstwall.pipeline import Pipeline, equivalence_check, replay_trace
from burstwall.recipes import build_rules, burst_matrix, distill, pipeline_config, train_forest, train_teacher
from burstwall.synth import DEFAULT_BL_SCHEMA, DEFAULT_PL_SCHEMA, TraceConfig, make_trace


def run(seed: int, cfg: Config) -> dict:
    start = time.perf_counter()
    train = [p for p in make_trace(TraceConfig(), seed=2 * seed + 1) if not p.malicious]
    X, _ = burst_matrix(train, DEFAULT_BL_SCHEMA)
    teacher = train_teacher(X, cfg, seed)
    df = distill(train_forest(X, DEFAULT_BL_SCHEMA, cfg, seed), teacher, DEFAULT_BL_SCHEMA, X, cfg, seed)
    rules = build_rules(df, train, DEFAULT_PL_SCHEMA, cfg, seed)
    test = make_trace(TraceConfig(), seed=2 * seed + 2)
    pcfg = pipeline_config(rules, cfg)
    pipe = Pipeline(pcfg, df.score)
    res = replay_trace(test, pcfg, hook=Controller(cfg.controller.tau, cfg.controller.policy), pipeline=pipe)
    y, pred, score = res.packet_predictions()
    rep = evaluate(y, pred, score, collisions=res.stats.collisions)
    compared, mismatched = equivalence_check(replay_trace(test, pcfg), test, rules)
    return dict(seed=seed, bl_rules=len(rules.bl), pl_rules=len(rules.pl), tpr=rep.tpr, tnr=rep.tnr,
                pr_auc=rep.pr_auc, blacklisted=len(pipe.blacklist), mismatched=mismatched,
                compared=compared, seconds=time.perf_counter() - start)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    cfg = Config()
    cols = ["seed", "bl_rules", "pl_rules", "tpr", "tnr", "pr_auc", "blacklisted", "compared", "mismatched", "seconds"]
    print("\t".join(cols))
    for seed in args.seeds:
        row = run(seed, cfg)
        print("\t".join(f"{row[c]:.4f}" if isinstance(row[c], float) else str(row[c]) for c in cols), flush=True)


if __name__ == "__main__":
    main()
