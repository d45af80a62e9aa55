"""Extra pipeline passes of the atomic and resubmit-all register strategies.

    python3 scripts/compare_strategies.py --burst-lens 5 10 15
"""

import argparse

from burstwall.pipeline import PipelineConfig, compare_strategies
from burstwall.rulegen import CombinedRuleSet, WhitelistRuleSet
from burstwall.synth import DEFAULT_BL_SCHEMA, DEFAULT_PL_SCHEMA, TraceConfig, make_trace, uniform_burst_trace


def allow_all() -> CombinedRuleSet:
    # rule content does not change pass counts: every burst closes the same way
    lo, hi = DEFAULT_BL_SCHEMA.bounds()
    pl_lo, pl_hi = DEFAULT_PL_SCHEMA.bounds()
    return CombinedRuleSet(WhitelistRuleSet([lo - 1], [hi], DEFAULT_BL_SCHEMA),
                           WhitelistRuleSet([pl_lo - 1], [pl_hi], DEFAULT_PL_SCHEMA, tag="pl"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--burst-lens", type=int, nargs="+", default=[5, 10, 15])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = PipelineConfig(allow_all())
    print("trace\tpackets\tresubmissions\tloopback_mirrors\tmirror_fraction\treduction")
    traces = [(f"uniform_{n}", uniform_burst_trace(burst_len=n, seed=args.seed)) for n in args.burst_lens]
    traces.append(("bursty", make_trace(TraceConfig(), seed=args.seed)))
    for name, trace in traces:
        r = compare_strategies(trace, cfg)
        print(f"{name}\t{r.packets}\t{r.resubmissions_resubmit_all}\t{r.loopback_mirrors_atomic}\t"
              f"{r.mirror_fraction:.4f}\t{r.reduction:.4f}")


if __name__ == "__main__":
    main()
