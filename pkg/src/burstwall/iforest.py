"""Isolation Forest with flat-array trees.

Each tree is stored as parallel node arrays (feature, threshold, children,
leaf sample count). Samples with ``x[f] <= threshold`` go left, so a node
covers the half-open interval (lower, upper] on its split axis.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from .traffic import FeatureSchema

FORMAT_TAG = "burstwall.iforest/1"


def harmonic(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    return digamma(n + 1.0) + np.euler_gamma


def c_factor(n) -> np.ndarray:
    """Average path length of an unsuccessful BST search over n points."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    big = n > 2
    out[n == 2] = 1.0
    out[big] = 2.0 * harmonic(n[big] - 1.0) - 2.0 * (n[big] - 1.0) / n[big]
    return out if out.ndim else float(out)


@dataclass
class ITree:
    feature: np.ndarray      # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray         # training samples that reached the node
    depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def leaf_ids(self) -> np.ndarray:
        """Map node index -> leaf number (or -1 for internal nodes)."""
        ids = np.full(self.n_nodes, -1, dtype=np.int64)
        leaves = self.leaves
        ids[leaves] = np.arange(len(leaves))
        return ids

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Node index of the leaf reached by each row of X."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def path_length(self, X: np.ndarray) -> np.ndarray:
        leaf = self.apply(X)
        return self.depth[leaf] + c_factor(self.size[leaf])

    def leaf_boxes(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-node (lower, upper] bounds, starting from the box (lo, hi]."""
        m = len(lo)
        lower = np.empty((self.n_nodes, m))
        upper = np.empty((self.n_nodes, m))
        lower[0], upper[0] = lo, hi
        for n in range(self.n_nodes):  # parents precede children
            f = self.feature[n]
            if f < 0:
                continue
            for child, side in ((self.left[n], 0), (self.right[n], 1)):
                lower[child], upper[child] = lower[n], upper[n]
                if side == 0:
                    upper[child, f] = min(upper[n, f], self.threshold[n])
                else:
                    lower[child, f] = max(lower[n, f], self.threshold[n])
        return lower, upper

    def split_thresholds(self) -> list[tuple[int, float]]:
        return [(int(f), float(t)) for f, t in zip(self.feature, self.threshold) if f >= 0]

    def to_json(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"size": int(self.size[node])}
        return {"feature": int(self.feature[node]), "threshold": float(self.threshold[node]),
                "size": int(self.size[node]),
                "left": self.to_json(int(self.left[node])),
                "right": self.to_json(int(self.right[node]))}

    @classmethod
    def from_json(cls, root: dict) -> "ITree":
        b = _Builder()
        stack = [(root, -1, 0, 0)]
        while stack:
            d, parent, side, depth = stack.pop()
            n = b.add(d.get("feature", -1), d.get("threshold", 0.0), d["size"], depth)
            if parent >= 0:
                (b.left if side == 0 else b.right)[parent] = n
            if "feature" in d:
                stack.append((d["right"], n, 1, depth + 1))
                stack.append((d["left"], n, 0, depth + 1))
        return b.build()


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.size, self.depth = [], []

    def add(self, f, t, size, depth) -> int:
        self.feature.append(f)
        self.threshold.append(t)
        self.left.append(-1)
        self.right.append(-1)
        self.size.append(size)
        self.depth.append(depth)
        return len(self.feature) - 1

    def build(self) -> ITree:
        return ITree(np.array(self.feature, dtype=np.int64), np.array(self.threshold, dtype=float),
                     np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
                     np.array(self.size, dtype=np.int64), np.array(self.depth, dtype=np.int64))


def _grow(X: np.ndarray, rng: np.random.Generator, max_depth: int) -> ITree:
    b = _Builder()
    stack = [(np.arange(len(X)), -1, 0, 0)]
    while stack:
        idx, parent, side, depth = stack.pop()
        sub = X[idx]
        mins, maxs = sub.min(axis=0), sub.max(axis=0)
        candidates = np.flatnonzero(maxs > mins)
        if depth >= max_depth or len(idx) <= 1 or candidates.size == 0:
            n = b.add(-1, 0.0, len(idx), depth)
        else:
            f = int(candidates[rng.integers(candidates.size)])
            t = rng.uniform(mins[f], maxs[f])
            while not mins[f] < t < maxs[f]:
                t = rng.uniform(mins[f], maxs[f])
            n = b.add(f, float(t), len(idx), depth)
            go_left = sub[:, f] <= t
            stack.append((idx[~go_left], n, 1, depth + 1))
            stack.append((idx[go_left], n, 0, depth + 1))
        if parent >= 0:
            (b.left if side == 0 else b.right)[parent] = n
    return b.build()


@dataclass
class IForestModel:
    trees: list[ITree]
    psi: int
    n_train: int
    schema: FeatureSchema
    seed: int

    @property
    def t(self) -> int:
        return len(self.trees)

    def path_lengths(self, X) -> np.ndarray:
        """(n_samples, t) matrix of adjusted path lengths."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([tr.path_length(X) for tr in self.trees], axis=1)

    def score(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mean = np.mean([tr.path_length(X) for tr in self.trees], axis=0)
        return 2.0 ** (-mean / c_factor(self.psi))

    def to_json(self) -> dict:
        return {"format": FORMAT_TAG, "schema": self.schema.to_json(),
                "psi": self.psi, "n_train": self.n_train, "seed": self.seed,
                "trees": [tr.to_json() for tr in self.trees]}

    @classmethod
    def from_json(cls, d: dict) -> "IForestModel":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"not an iforest model file (format {d.get('format')!r})")
        return cls([ITree.from_json(t) for t in d["trees"]], int(d["psi"]), int(d["n_train"]),
                   FeatureSchema.from_json(d["schema"]), int(d["seed"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def model_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def train_iforest(X, t: int = 100, psi: int = 256, seed: int = 0,
                  schema: FeatureSchema | None = None) -> IForestModel:
    """Grow t isolation trees, each on a sub-sample of size psi without replacement."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    if t < 1:
        raise ValueError("t must be at least 1")
    if not 2 <= psi <= len(X):
        raise ValueError(f"psi must be in [2, {len(X)}], got {psi}")
    if schema is None:
        schema = FeatureSchema.of(*[(f"f{j}", "BL", False, 64) for j in range(X.shape[1])])
    elif len(schema) != X.shape[1]:
        raise ValueError("schema length does not match data")
    max_depth = math.ceil(math.log2(psi))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(t):
        rng = np.random.default_rng(child)
        sample = X[rng.choice(len(X), size=psi, replace=False)]
        trees.append(_grow(sample, rng, max_depth))
    return IForestModel(trees, psi, len(X), schema, seed)


def traverse_to_leaf(tree: ITree, x) -> tuple[int, float]:
    """Leaf number reached by x and its adjusted path length."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    node = int(tree.apply(x)[0])
    return int(tree.leaf_ids()[node]), float(tree.depth[node] + c_factor(tree.size[node]))


def anomaly_score(model: IForestModel, x) -> np.ndarray | float:
    s = model.score(x)
    return float(s[0]) if np.ndim(x) == 1 else s


def label_if(model: IForestModel, x, theta_if: float = 0.5):
    """1 (malicious) where the anomaly score reaches theta_if."""
    if not 0 < theta_if < 1:
        raise ValueError("theta_if must lie in (0, 1)")
    s = model.score(x)
    lab = (s >= theta_if).astype(np.int64)
    return int(lab[0]) if np.ndim(x) == 1 else lab


def theta_from_contamination(scores, q: float) -> float:
    """Largest threshold that flags at least a fraction q of ``scores``."""
    s = np.sort(np.asarray(scores, dtype=float))[::-1]
    if not 0 < q <= 1:
        raise ValueError("contamination must lie in (0, 1]")
    return float(s[max(0, math.ceil(q * len(s)) - 1)])
