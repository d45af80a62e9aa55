"""Transfer an autoencoder ensemble's judgement into isolation-forest leaves."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .autoencoder import Ensemble, vote_label
from .iforest import IForestModel, label_if

FORMAT_TAG = "burstwall.distilled/1"
COMBINERS = ("product", "distilled_only", "iforest_only")


@dataclass
class TreeEmbedding:
    """Leaf embeddings of one tree, indexed by leaf number."""

    mean_res: np.ndarray         # (L, r)
    indicator: np.ndarray        # (L, r)
    label: np.ndarray            # (L,)
    mapped_count: np.ndarray     # (L,)
    augmented_count: np.ndarray  # (L,)

    def to_json(self) -> list[dict]:
        return [{"mean_res": self.mean_res[j].tolist(), "indicator": self.indicator[j].tolist(),
                 "label": int(self.label[j]), "mapped": int(self.mapped_count[j]),
                 "augmented": int(self.augmented_count[j])} for j in range(len(self.label))]

    @classmethod
    def from_json(cls, rows: list[dict]) -> "TreeEmbedding":
        return cls(np.array([r["mean_res"] for r in rows], dtype=float),
                   np.array([r["indicator"] for r in rows], dtype=np.int64),
                   np.array([r["label"] for r in rows], dtype=np.int64),
                   np.array([r["mapped"] for r in rows], dtype=np.int64),
                   np.array([r["augmented"] for r in rows], dtype=np.int64))


@dataclass
class DistilledForest:
    forest: IForestModel
    embeddings: list[TreeEmbedding]
    combiner: str = "product"
    theta_if: float = 0.5
    teacher_hash: str = ""

    def __post_init__(self):
        if self.combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {self.combiner!r}")
        if len(self.embeddings) != self.forest.t:
            raise ValueError("one embedding per tree is required")
        self._node_labels = []
        for tree, emb in zip(self.forest.trees, self.embeddings):
            ids = tree.leaf_ids()
            lab = np.full(tree.n_nodes, -1, dtype=np.int64)
            lab[ids >= 0] = emb.label[ids[ids >= 0]]
            self._node_labels.append(lab)

    @property
    def schema(self):
        return self.forest.schema

    def with_combiner(self, combiner: str, theta_if: float | None = None) -> "DistilledForest":
        return DistilledForest(self.forest, self.embeddings, combiner,
                               self.theta_if if theta_if is None else theta_if, self.teacher_hash)

    def tree_votes(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([lab[tree.apply(X)] for tree, lab in
                         zip(self.forest.trees, self._node_labels)], axis=1)

    def vote_fraction(self, X) -> np.ndarray:
        return self.tree_votes(X).mean(axis=1)

    def predict_distilled(self, X) -> np.ndarray:
        # ties go to malicious
        v = self.tree_votes(X)
        return (2 * v.sum(axis=1) >= v.shape[1]).astype(np.int64)

    def label_if(self, X) -> np.ndarray:
        return label_if(self.forest, np.atleast_2d(X), self.theta_if)

    def predict_combined(self, X) -> np.ndarray:
        if self.combiner == "distilled_only":
            return self.predict_distilled(X)
        if self.combiner == "iforest_only":
            return self.label_if(X)
        return self.label_if(X) * self.predict_distilled(X)

    def score(self, X) -> np.ndarray:
        """Continuous ranking score for precision-recall curves."""
        if self.combiner == "iforest_only":
            return self.forest.score(X)
        vf = self.vote_fraction(X)
        return vf if self.combiner == "distilled_only" else vf * self.forest.score(X)

    def to_json(self) -> dict:
        d = self.forest.to_json()
        d.update(format=FORMAT_TAG, combiner=self.combiner, theta_if=self.theta_if,
                 teacher_hash=self.teacher_hash,
                 leaf_embeddings=[e.to_json() for e in self.embeddings])
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DistilledForest":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"not a distilled forest file (format {d.get('format')!r})")
        from .iforest import FORMAT_TAG as IF_TAG
        forest = IForestModel.from_json({**d, "format": IF_TAG})
        return cls(forest, [TreeEmbedding.from_json(e) for e in d["leaf_embeddings"]],
                   d["combiner"], float(d["theta_if"]), d.get("teacher_hash", ""))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def model_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def map_training_to_leaves(model: IForestModel, X) -> list[dict[int, np.ndarray]]:
    """For each tree, leaf number -> indices of X that reach it."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = []
    for tree in model.trees:
        leaf = tree.leaf_ids()[tree.apply(X)]
        order = np.argsort(leaf, kind="stable")
        uniq, starts = np.unique(leaf[order], return_index=True)
        parts = np.split(order, starts[1:])
        out.append({int(u): p for u, p in zip(uniq, parts)})
    return out


def leaf_box(lower: np.ndarray, upper: np.ndarray, integer: np.ndarray,
             dom_lo: np.ndarray, dom_hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed sampling box [a, b] for a node interval (lower, upper], clamped to the domain."""
    a = np.maximum(lower, dom_lo)
    b = np.minimum(upper, dom_hi)
    a = np.where(integer, np.maximum(np.floor(lower) + 1, dom_lo), a)
    b = np.where(integer, np.floor(b), b)
    return a, b


def augment_leaf(a, b, integer, k: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Draw k points uniformly from the box [a, b].

    Integer axes take integer values. When every axis is integral the points
    are distinct, and k is cut to the number of lattice points if the box is
    smaller than that; the shortfall is returned alongside the samples.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    integer = np.asarray(integer, dtype=bool)
    m = len(a)
    if k <= 0:
        return np.empty((0, m)), 0
    counts = np.where(integer, b - a + 1, 1.0)
    if np.any(b < a) or np.any(integer & (counts < 1)):
        return np.empty((0, m)), k
    if not integer.all():
        out = rng.uniform(a, b, size=(k, m))
        ints = np.flatnonzero(integer)
        if ints.size:
            out[:, ints] = rng.integers(a[ints].astype(np.int64), b[ints].astype(np.int64) + 1,
                                        size=(k, ints.size))
        return out, 0
    dims = [int(c) for c in counts]
    card = math.prod(dims)
    take = min(k, card)
    if card < 2**62:
        flat = rng.choice(card, size=take, replace=False)
        coords = np.stack(np.unravel_index(flat, dims), axis=1).astype(float)
    else:
        seen: set = set()
        rows = []
        while len(rows) < take:
            row = tuple(int(v) for v in rng.integers(0, dims))
            if row not in seen:
                seen.add(row)
                rows.append(row)
        coords = np.array(rows, dtype=float)
    return a + coords, k - take


def embed_leaves(model: IForestModel, ensemble: Ensemble, X_train, k: int = 50, seed: int = 0,
                 combiner: str = "product", theta_if: float = 0.5,
                 leaf_bounds: str = "train_range") -> DistilledForest:
    """Attach mean reconstruction errors and a label to every leaf.

    ``leaf_bounds`` picks what closes the open sides of boundary leaves before
    augmentation: ``schema`` uses the features' bit-width range, ``train_range``
    uses the range of X_train (the teacher's normalisation range), intersected
    with the bit-width range.
    """
    X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
    schema = model.schema
    if X_train.shape[1] != len(schema) or ensemble.members[0].m != len(schema):
        raise ValueError("teacher, forest and data disagree on the feature count")
    integer = np.array([f.integer for f in schema])
    dom_lo, dom_hi = schema.bounds()
    E_train = ensemble.errors(X_train)
    thresholds = ensemble.thresholds
    r = ensemble.r
    embeddings = []
    for tree, child in zip(model.trees, np.random.SeedSequence(seed).spawn(model.t)):
        rng = np.random.default_rng(child)
        leaves = tree.leaves
        L = len(leaves)
        leaf_of = tree.leaf_ids()[tree.apply(X_train)]
        mapped = np.bincount(leaf_of, minlength=L)
        sums = np.stack([np.bincount(leaf_of, weights=E_train[:, u], minlength=L)
                         for u in range(r)], axis=1)
        if leaf_bounds == "schema":
            lo, hi = np.where(integer, dom_lo - 1, dom_lo), dom_hi
        elif leaf_bounds == "train_range":
            lo, hi = _sample_range(tree, X_train, dom_lo, dom_hi, integer)
        else:
            raise ValueError(f"unknown leaf_bounds {leaf_bounds!r}")
        lower, upper = tree.leaf_boxes(lo, hi)
        aug_counts = np.zeros(L, dtype=np.int64)
        samples, owner = [], []
        for j, node in enumerate(leaves):
            a, b = leaf_box(lower[node], upper[node], integer, dom_lo, dom_hi)
            pts, short = augment_leaf(a, b, integer, k, rng)
            aug_counts[j] = len(pts)
            if len(pts):
                samples.append(pts)
                owner.append(np.full(len(pts), j))
        if samples:
            E_aug = ensemble.errors(np.concatenate(samples))
            own = np.concatenate(owner)
            sums += np.stack([np.bincount(own, weights=E_aug[:, u], minlength=L)
                              for u in range(r)], axis=1)
        total = mapped + aug_counts
        mean_res = np.divide(sums, total[:, None], out=np.zeros_like(sums), where=total[:, None] > 0)
        ind = (mean_res > thresholds).astype(np.int64)
        label = vote_label(ind, ensemble.weights)
        label[total == 0] = 1
        embeddings.append(TreeEmbedding(mean_res, ind, label, mapped, aug_counts))
    return DistilledForest(model, embeddings, combiner, theta_if, ensemble.model_hash())


def _sample_range(tree, X, dom_lo, dom_hi, integer):
    # the root keeps no data, so the training range stands in for the sub-sample range
    lo = np.where(integer, X.min(axis=0) - 1, X.min(axis=0))
    return np.maximum(lo, np.where(integer, dom_lo - 1, dom_lo)), np.minimum(X.max(axis=0), dom_hi)


def predict_distilled(df: DistilledForest, x):
    lab = df.predict_distilled(x)
    return int(lab[0]) if np.ndim(x) == 1 else lab


def predict_combined(df: DistilledForest, x):
    lab = df.predict_combined(x)
    return int(lab[0]) if np.ndim(x) == 1 else lab


def distillation_consistency(df: DistilledForest, teacher: Ensemble, X_eval) -> float:
    """Share of X_eval where the distilled vote agrees with the teacher's label."""
    X_eval = np.atleast_2d(np.asarray(X_eval, dtype=float))
    if len(X_eval) == 0:
        raise ValueError("empty evaluation set")
    student = df.predict_distilled(X_eval)
    return float(np.mean(student == teacher.label_from_errors(teacher.errors(X_eval))))
