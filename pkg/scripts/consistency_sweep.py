"""Distillation consistency of the feature-level generator over trees, sub-sample size and k.

    python3 scripts/consistency_sweep.py --seeds 0 1 2 --t 20 50 200 --k 5 20 50
"""

import argparse
import statistics
import time

from burstwall.autoencoder import train_ensemble
from burstwall.distill import distillation_consistency, embed_leaves
from burstwall.iforest import train_iforest
from burstwall.synth import FeatureSetConfig, make_feature_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--t", type=int, nargs="+", default=[20, 200])
    ap.add_argument("--psi", type=int, nargs="+", default=[400])
    ap.add_argument("--k", type=int, nargs="+", default=[5, 50])
    ap.add_argument("--epochs", type=int, default=100)
    args = ap.parse_args()

    results: dict[tuple, list] = {}
    for seed in args.seeds:
        ds = make_feature_dataset(FeatureSetConfig(), seed=seed)
        ens = train_ensemble(ds.X_train, ds.X_val, epochs=args.epochs, seed=seed)
        X, y = ds.X_mixed, ds.y_mixed
        for t in args.t:
            for psi in args.psi:
                forest = train_iforest(ds.X_train, t, psi, seed=seed, schema=ds.schema)
                for k in args.k:
                    start = time.perf_counter()
                    df = embed_leaves(forest, ens, ds.X_train, k=k, seed=seed)
                    c = distillation_consistency(df, ens, ds.X_eval)
                    pc, li = df.predict_combined(X), df.label_if(X)
                    results.setdefault((t, psi, k), []).append(
                        (c, 1 - pc[y == 0].mean(), pc[y == 1].mean(), 1 - li[y == 0].mean(), li[y == 1].mean(),
                         time.perf_counter() - start))
    print("t\tpsi\tk\tC_median\tC_min\tTNR_comb\tTPR_comb\tTNR_IF\tTPR_IF\tembed_s")
    for (t, psi, k), rows in sorted(results.items()):
        cols = list(zip(*rows))
        med = [statistics.median(c) for c in cols]
        print(f"{t}\t{psi}\t{k}\t{med[0]:.4f}\t{min(cols[0]):.4f}\t" + "\t".join(f"{v:.4f}" for v in med[1:]))


if __name__ == "__main__":
    main()
