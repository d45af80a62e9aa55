"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error (missing or
malformed inputs, artifacts that do not fit together), 4 failed consistency
check.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, dump_config, int_list, load_config
from .controller import (CandidateMetrics, Controller, OnlineConfig, OnlineUpdater, ProfilerConfig,
                         profile, register_bits, write_profile_tsv)
from .distill import DistilledForest
from .iforest import IForestModel
from .metrics import evaluate, read_verdict_log
from .pipeline import Pipeline, compare_strategies, replay_trace
from .recipes import (build_rules, burst_matrix, distill, dump_json, file_digest,
                      load_json, parse_schema, pipeline_config, teacher_from_json, teacher_to_json,
                      train_forest, train_teacher)
from .rulegen import CombinedRuleSet, RuleGenError, rules_consistency
from .traffic import TraceError, parse_trace, write_trace

log = logging.getLogger("burstwall")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONSISTENCY = 0, 2, 3, 4


class DataError(Exception):
    pass


class ConsistencyError(Exception):
    pass


# --- helpers ---------------------------------------------------------------

def _read_trace(path) -> list:
    diags: list = []
    try:
        packets = list(parse_trace(path, diagnostics=diags))
    except (OSError, TraceError) as exc:
        raise DataError(f"cannot read trace {path}: {exc}") from exc
    for d in diags[:10]:
        log.warning("%s: %s", path, d)
    if not packets:
        raise DataError(f"trace {path} holds no valid packets")
    return packets


def _load(path) -> dict:
    try:
        return load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _models(paths) -> dict:
    """Sort --model files by their format tag."""
    out = {}
    for p in paths or []:
        d = _load(p)
        fmt = d.get("format", "")
        if fmt.startswith("burstwall.teacher"):
            out["teacher"] = (p, d)
        elif fmt.startswith("burstwall.distilled"):
            out["distilled"] = (p, d)
        elif fmt.startswith("burstwall.iforest"):
            out["iforest"] = (p, d)
        else:
            raise DataError(f"{p}: unrecognised model format {fmt!r}")
    return out


def _need(models: dict, kind: str, cmd: str):
    if kind not in models:
        raise DataError(f"{cmd} needs a {kind} model (--model)")
    return models[kind]


def _manifest(args, cfg, inputs: list, outputs: list, started: float, extra: dict | None = None):
    import scipy
    man = {"command": args.command, "seed": args.seed,
           "inputs": {str(p): file_digest(p) for p in inputs},
           "outputs": [str(p) for p in outputs],
           "config": dump_config(cfg),
           "versions": {"burstwall": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                        "python": platform.python_version()},
           "started": started, "finished": time.time()}
    man.update(extra or {})
    out = Path(args.out)
    path = (out / "manifest.json") if out.is_dir() else out.with_name(out.name + ".manifest.json")
    dump_json(man, path)


def _schemas(cfg):
    return parse_schema(cfg.features.bl, "BL"), parse_schema(cfg.features.pl, "PL")


# --- subcommands -----------------------------------------------------------

def cmd_synth(args, cfg):
    from .synth import TraceConfig, make_trace
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tc = TraceConfig(n_benign_flows=cfg.synth.n_benign_flows, n_attack_flows=cfg.synth.n_attack_flows)
    train = [p for p in make_trace(tc, args.seed) if not p.malicious]
    write_trace(train, out / "train.jsonl")
    write_trace(make_trace(tc, args.seed + 1), out / "eval.jsonl")
    return [], [out / "train.jsonl", out / "eval.jsonl"], {}


def cmd_train_ae(args, cfg):
    bl, _ = _schemas(cfg)
    trace = _read_trace(args.trace[0])
    X, _ = burst_matrix(trace, bl, cfg.burst)
    if len(X) < 20:
        raise DataError(f"only {len(X)} benign bursts in {args.trace[0]}")
    ens = train_teacher(X, cfg, args.seed)
    dump_json(teacher_to_json(ens, bl), args.out)
    return [args.trace[0]], [args.out], {"bursts": len(X), "thresholds": ens.thresholds.tolist()}


def cmd_train_iforest(args, cfg):
    bl, _ = _schemas(cfg)
    trace = _read_trace(args.trace[0])
    X, _ = burst_matrix(trace, bl, cfg.burst)
    if len(X) < 2:
        raise DataError(f"only {len(X)} benign bursts in {args.trace[0]}")
    forest = train_forest(X, bl, cfg, args.seed)
    dump_json(forest.to_json(), args.out)
    return [args.trace[0]], [args.out], {"bursts": len(X), "model_hash": forest.model_hash()}


def cmd_distill(args, cfg):
    models = _models(args.model)
    tp, td = _need(models, "teacher", "distill")
    fp, fd = _need(models, "iforest", "distill")
    teacher, t_schema = teacher_from_json(td)
    forest = IForestModel.from_json(fd)
    trace = _read_trace(args.trace[0])
    X, _ = burst_matrix(trace, forest.schema, cfg.burst)
    df = distill(forest, teacher, t_schema, X, cfg, args.seed)
    dump_json(df.to_json(), args.out)
    return [tp, fp, args.trace[0]], [args.out], {"model_hash": df.model_hash()}


def cmd_compile_rules(args, cfg):
    models = _models(args.model)
    dp, dd = _need(models, "distilled", "compile-rules")
    df = DistilledForest.from_json(dd)
    _, pl = _schemas(cfg)
    trace = _read_trace(args.trace[0])
    rules = build_rules(df, trace, pl, cfg, args.seed)
    # self-test: the whitelist must reproduce the model on random integer points
    rng = np.random.default_rng(args.seed)
    lo, hi = df.schema.bounds()
    X = np.floor(rng.uniform(lo, hi + 1, size=(10_000, len(lo))))
    c = rules_consistency(rules.bl, df, X)
    dump_json(rules.to_json(), args.out)
    rules.bl.write_tsv(str(args.out) + ".bl.tsv")
    rules.pl.write_tsv(str(args.out) + ".pl.tsv")
    if c < args.min_consistency:
        raise ConsistencyError(f"rule consistency {c:.6f} below {args.min_consistency}")
    return [dp, args.trace[0]], [args.out], {"rule_consistency": c, "bl_rules": len(rules.bl),
                                             "pl_rules": len(rules.pl)}


def _scorer(models):
    if "distilled" not in models:
        return None
    df = DistilledForest.from_json(models["distilled"][1])
    return lambda v: float(df.score(v)[0])


def _load_rules(path) -> CombinedRuleSet:
    try:
        return CombinedRuleSet.from_json(_load(path))
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def cmd_replay(args, cfg):
    rules = _load_rules(args.rules)
    models = _models(args.model)
    trace = _read_trace(args.trace[0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    if args.strategy == "both":
        report = compare_strategies(trace, pipeline_config(rules, cfg))
        dump_json(report.to_json(), out / "strategies.json")
        extra["strategies"] = report.to_json()
        strategy = "atomic"
    else:
        strategy = args.strategy
    pcfg = pipeline_config(rules, cfg, strategy)
    updater = None
    if cfg.controller.online and "teacher" in models:
        teacher, _ = teacher_from_json(models["teacher"][1])
        oc = OnlineConfig(cfg.controller.batch, cfg.controller.window, cfg.iforest.t, cfg.iforest.psi,
                          cfg.distill.k, args.seed, cfg.rules.cube_cap)
        updater = OnlineUpdater(oc, teacher, rules.bl.schema, cfg.distill.combiner, cfg.iforest.theta_if)
    ctl = Controller(cfg.controller.tau, cfg.controller.policy, updater)
    pipe = Pipeline(pcfg, _scorer(models))
    res = replay_trace(trace, pcfg, hook=ctl, pipeline=pipe)
    res.write_log(out / "verdicts.jsonl")
    res.write_stats(out / "stats.json")
    with open(out / "digests.jsonl", "w") as fh:
        for d in res.digests:
            fh.write(json.dumps({"flow": d.five_tuple.to_json(), "verdict": d.verdict, "ts_ns": d.ts_ns,
                                 "burst_uid": d.burst_uid, "features": d.features}, sort_keys=True) + "\n")
    ctl.write_blacklist(pipe, out / "blacklist.jsonl")
    inputs = [args.rules, args.trace[0]] + [p for p, _ in models.values()]
    extra.update(stats=res.stats.to_json())
    return inputs, [out / "verdicts.jsonl", out / "stats.json"], extra


def cmd_evaluate(args, cfg):
    try:
        y, pred, score, coll = read_verdict_log(args.log)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot evaluate {args.log}: {exc}") from exc
    rep = evaluate(y, pred, score, collisions=coll)
    dump_json(rep.to_json(), args.out)
    print(json.dumps(rep.to_json(), sort_keys=True))
    return [args.log], [args.out], {}


def cmd_compare_strategies(args, cfg):
    rules = _load_rules(args.rules)
    trace = _read_trace(args.trace[0])
    report = compare_strategies(trace, pipeline_config(rules, cfg))
    dump_json(report.to_json(), args.out)
    print(json.dumps(report.to_json(), sort_keys=True))
    return [args.rules, args.trace[0]], [args.out], {}


def cmd_profile(args, cfg):
    if len(args.trace) != 2:
        raise DataError("profile needs --trace TRAIN --trace VALIDATION")
    bl, pl = _schemas(cfg)
    train, val = _read_trace(args.trace[0]), _read_trace(args.trace[1])
    X, _ = burst_matrix(train, bl, cfg.burst)
    teacher = train_teacher(X, cfg, args.seed)
    pc = cfg.profiler
    grid = {"t": int_list(pc.t), "psi": int_list(pc.psi), "k": int_list(pc.k)}

    def evaluator(cand):
        c = replace(cfg, iforest=replace(cfg.iforest, t=cand["t"], psi=cand["psi"]),
                    distill=replace(cfg.distill, k=cand["k"]))
        forest = train_forest(X, bl, c, args.seed)
        df = distill(forest, teacher, bl, X, c, args.seed)
        try:
            rules = build_rules(df, train, pl, c, args.seed)
        except RuleGenError as exc:
            log.warning("candidate %s skipped: %s", cand, exc)
            return CandidateMetrics(0.0, 0.0, 0.0, pc.rule_capacity, pc.register_capacity)
        res = replay_trace(val, pipeline_config(rules, c), scorer=lambda v: float(df.score(v)[0]))
        y, pred, score = res.packet_predictions()
        m = evaluate(y, pred, score)
        return CandidateMetrics(m.tpr, m.tnr, m.pr_auc, len(rules.bl) + len(rules.pl),
                                register_bits((cfg.hash.a1, cfg.hash.a2), len(bl)))

    best, rows = profile(ProfilerConfig(grid, pc.alpha, pc.rule_capacity, pc.register_capacity), evaluator)
    write_profile_tsv(rows, args.out)
    print(json.dumps({"best": best}, sort_keys=True))
    return list(args.trace), [args.out], {"best": best}


COMMANDS = {
    "synth": (cmd_synth, "write a bundled synthetic train/eval trace pair"),
    "train-ae": (cmd_train_ae, "train the autoencoder teacher on benign bursts"),
    "train-iforest": (cmd_train_iforest, "train an isolation forest on benign bursts"),
    "distill": (cmd_distill, "embed teacher judgements into forest leaves"),
    "compile-rules": (cmd_compile_rules, "compile whitelist rules from a distilled forest"),
    "replay": (cmd_replay, "replay a trace through the switch model"),
    "evaluate": (cmd_evaluate, "packet-level metrics from a verdict log"),
    "profile": (cmd_profile, "grid-search hyperparameters by reward"),
    "compare-strategies": (cmd_compare_strategies, "count extra passes per register strategy"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="burstwall", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration value")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--trace", action="append", default=[])
        p.add_argument("--model", action="append", default=[])
        p.add_argument("--rules")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "replay":
            p.add_argument("--strategy", choices=("atomic", "resubmit_all", "both"), default="atomic")
        if name == "evaluate":
            p.add_argument("--log", required=True, help="verdicts.jsonl written by replay")
        if name == "compile-rules":
            p.add_argument("--min-consistency", type=float, default=0.99)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    started = time.time()
    try:
        if any("=" not in kv or "." not in kv.split("=", 1)[0] for kv in args.set):
            raise ConfigError("--set expects SECTION.KEY=VALUE")
        overrides = dict(kv.split("=", 1) for kv in args.set)
        if args.seed is not None:
            overrides["run.seed"] = args.seed
        cfg = load_config(args.config, overrides)
        args.seed = cfg.seed
        needs_trace = args.command not in ("synth", "evaluate")
        if needs_trace and not args.trace:
            raise DataError(f"{args.command} needs --trace")
        if args.command in ("replay", "compare-strategies") and not args.rules:
            raise DataError(f"{args.command} needs --rules")
        inputs, outputs, extra = fn(args, cfg)
        _manifest(args, cfg, inputs, outputs, started, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConsistencyError as exc:
        print(f"consistency check failed: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except (DataError, ValueError, OSError) as exc:
        # artifact mismatches, unreadable or unwritable files and rule-generation limits all land here
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
