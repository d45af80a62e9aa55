"""Compile a (distilled) isolation forest into whitelist range rules.

Every split threshold of every tree, per feature, forms a branch set. The
cartesian product of the intervals between consecutive branches is a grid of
hypercubes on which all trees are constant, so one evaluation per cube labels
it. Benign cubes, merged where they abut, become range-match rules.

Intervals are half-open, (lower, upper]. On integer features the rules are
emitted as closed ranges [lower + 1, upper].
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distill import DistilledForest
from .iforest import IForestModel, label_if
from .traffic import FeatureSchema

FORMAT_TAG = "burstwall.rules/1"
DEFAULT_CUBE_CAP = 10**7


class RuleGenError(ValueError):
    pass


# --- branch sets -----------------------------------------------------------

def _forest(model) -> IForestModel:
    return model.forest if isinstance(model, DistilledForest) else model


def extract_branch_sets(model) -> list[np.ndarray]:
    """Sorted, de-duplicated split thresholds per feature over all trees."""
    forest = _forest(model)
    m = len(forest.schema)
    per = [[] for _ in range(m)]
    for tree in forest.trees:
        inner = tree.feature >= 0
        for f, t in zip(tree.feature[inner], tree.threshold[inner]):
            per[f].append(t)
    return [np.unique(np.asarray(v, dtype=float)) for v in per]


def shift_integer_boundaries(branch_sets: Sequence[np.ndarray], schema: FeatureSchema,
                             keep_float: Sequence[str] = ()) -> list[np.ndarray]:
    """Floor every branch of an integer feature.

    For an integer point a, a lies in (b0, b1] exactly when it lies in
    (floor(b0), floor(b1)], so flooring keeps the classification of integer
    inputs. Non-integer features must be listed in ``keep_float``.
    """
    if len(branch_sets) != len(schema):
        raise ValueError("one branch set per schema feature is required")
    out = []
    for b, f in zip(branch_sets, schema):
        if f.name in keep_float:
            out.append(np.unique(np.asarray(b, dtype=float)))
        elif not f.integer:
            raise RuleGenError(f"feature {f.name!r} is not integer; flooring would change its "
                               "classification (pass it in keep_float to leave it as is)")
        else:
            out.append(np.unique(np.floor(np.asarray(b, dtype=float))))
    return out


# --- hypercube grid --------------------------------------------------------

@dataclass
class HypercubeSet:
    """Grid of cubes induced by per-axis edges.

    ``edges[j]`` runs from an exclusive lower domain bound to the inclusive
    upper one; cube i on axis j is (edges[j][i], edges[j][i + 1]].
    """

    edges: list[np.ndarray]
    schema: FeatureSchema
    labels: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(e) - 1 for e in self.edges)

    @property
    def n_cubes(self) -> int:
        return math.prod(self.shape)

    def bounds(self, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) arrays of shape (len(flat), m) for flat cube indices."""
        idx = np.unravel_index(np.asarray(flat, dtype=np.int64), self.shape)
        lower = np.stack([e[i] for e, i in zip(self.edges, idx)], axis=1)
        upper = np.stack([e[i + 1] for e, i in zip(self.edges, idx)], axis=1)
        return lower, upper

    def representatives(self, flat: np.ndarray) -> np.ndarray:
        """Per-axis upper bound of each cube."""
        return self.bounds(flat)[1]

    def locate(self, X) -> np.ndarray:
        """Flat index of the cube holding each row of X (points must lie in the domain)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = [np.searchsorted(e, X[:, j], side="left") - 1 for j, e in enumerate(self.edges)]
        return np.ravel_multi_index(idx, self.shape)

    def cube_list(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        flat = np.arange(self.n_cubes)
        lower, upper = self.bounds(flat)
        return lower, upper, self.labels.reshape(-1).copy()


def build_hypercube_grid(branch_sets: Sequence[np.ndarray], schema: FeatureSchema,
                         cap: int = DEFAULT_CUBE_CAP) -> HypercubeSet:
    """Cartesian product of the branch intervals, clamped to the schema domain."""
    dom_lo, dom_hi = schema.bounds()
    edges = []
    for b, lo, hi in zip(branch_sets, dom_lo, dom_hi):
        b = np.asarray(b, dtype=float)
        inner = b[(b >= lo) & (b < hi)]
        edges.append(np.concatenate([[lo - 1], inner, [hi]]))
    count = math.prod(len(e) - 1 for e in edges)
    if count > cap:
        sizes = " x ".join(str(len(e) - 1) for e in edges)
        raise RuleGenError(f"hypercube grid has {count} cubes ({sizes}), above the cap of {cap}; "
                           "use fewer trees, a smaller sub-sample or fewer features")
    return HypercubeSet(edges, schema)


def _predictor(model, theta_if: float | None) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, DistilledForest):
        return model.predict_combined
    if isinstance(model, IForestModel):
        return lambda X: label_if(model, X, 0.5 if theta_if is None else theta_if)
    if callable(model):
        return model
    raise TypeError(f"cannot label cubes with {type(model).__name__}")


def label_hypercubes(grid: HypercubeSet, model, theta_if: float | None = None,
                     chunk: int = 1 << 18) -> HypercubeSet:
    """Label each cube by the model's verdict at its upper corner."""
    predict = _predictor(model, theta_if)
    labels = np.empty(grid.n_cubes, dtype=np.int64)
    for start in range(0, grid.n_cubes, chunk):
        flat = np.arange(start, min(start + chunk, grid.n_cubes))
        labels[flat] = predict(grid.representatives(flat))
    return HypercubeSet(grid.edges, grid.schema, labels.reshape(grid.shape))


# --- merging ---------------------------------------------------------------

def _merge_axis(lower, upper, label, a):
    m = lower.shape[1]
    others = [j for j in range(m) if j != a]
    keys = [lower[:, a]] + [upper[:, j] for j in reversed(others)] \
        + [lower[:, j] for j in reversed(others)] + [label]
    order = np.lexsort(keys)
    lo, hi, lab = lower[order], upper[order], label[order]
    same = lab[1:] == lab[:-1]
    for j in others:
        same &= (lo[1:, j] == lo[:-1, j]) & (hi[1:, j] == hi[:-1, j])
    same &= lo[1:, a] == hi[:-1, a]
    start = np.r_[True, ~same]
    first = np.flatnonzero(start)
    last = np.r_[first[1:] - 1, len(lab) - 1]
    new_lo, new_hi = lo[first].copy(), hi[first].copy()
    new_hi[:, a] = hi[last, a]
    return new_lo, new_hi, lab[first]


def merge_adjacent(lower: np.ndarray, upper: np.ndarray, label: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coalesce same-label cubes that match on all axes but one and abut on it.

    Sweeps the axes in turn until a full sweep changes nothing.
    """
    lower, upper, label = np.asarray(lower, float), np.asarray(upper, float), np.asarray(label)
    if len(label) == 0:
        return lower, upper, label
    while True:
        before = len(label)
        for a in range(lower.shape[1]):
            lower, upper, label = _merge_axis(lower, upper, label, a)
        if len(label) == before:
            return lower, upper, label


# --- rules -----------------------------------------------------------------

@dataclass
class WhitelistRuleSet:
    """Benign regions as boxes (lower, upper]; a point matching none is malicious."""

    lower: np.ndarray
    upper: np.ndarray
    schema: FeatureSchema
    model_hash: str = ""
    tag: str = "bl"

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1, len(self.schema))
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1, len(self.schema))

    def __len__(self) -> int:
        return len(self.lower)

    @property
    def integer(self) -> np.ndarray:
        return np.array([f.integer for f in self.schema])

    def closed_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer axes as closed ranges [lower + 1, upper]; other axes unchanged."""
        lo = np.where(self.integer, self.lower + 1, self.lower)
        return lo, self.upper.copy()

    def match(self, X) -> np.ndarray:
        """0 where some rule contains the row, else 1."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.ones(len(X), dtype=np.int64)
        R, m = self.lower.shape
        if R == 0 or len(X) == 0:
            return out
        step = max(1, (1 << 22) // (R * m))
        for s in range(0, len(X), step):
            x = X[s:s + step, None, :]
            hit = np.all((x > self.lower) & (x <= self.upper), axis=2).any(axis=1)
            out[s:s + step] = np.where(hit, 0, 1)
        return out

    def to_json(self) -> dict:
        lo, hi = self.closed_bounds()
        rules = [{"bounds": [[_num(a), _num(b)] for a, b in zip(l, h)]} for l, h in zip(lo, hi)]
        return {"format": FORMAT_TAG, "tag": self.tag, "schema": self.schema.to_json(),
                "rules": rules, "model_hash": self.model_hash}

    @classmethod
    def from_json(cls, d: dict) -> "WhitelistRuleSet":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"not a rule file (format {d.get('format')!r})")
        schema = FeatureSchema.from_json(d["schema"])
        b = np.array([r["bounds"] for r in d["rules"]], dtype=float).reshape(-1, len(schema), 2)
        integer = np.array([f.integer for f in schema])
        return cls(np.where(integer, b[:, :, 0] - 1, b[:, :, 0]), b[:, :, 1], schema,
                   d.get("model_hash", ""), d.get("tag", "bl"))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def write_tsv(self, path) -> None:
        """One rule per line, a lo/hi column pair per feature."""
        lo, hi = self.closed_bounds()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow([f"{n}_{s}" for n in self.schema.names for s in ("lo", "hi")])
            for l, h in zip(lo, hi):
                w.writerow([_num(v) for pair in zip(l, h) for v in pair])


def _num(v: float):
    return int(v) if float(v).is_integer() else float(v)


def emit_whitelist(lower, upper, label, schema: FeatureSchema, model_hash: str = "",
                   tag: str = "bl") -> WhitelistRuleSet:
    keep = np.asarray(label) == 0
    return WhitelistRuleSet(np.asarray(lower)[keep], np.asarray(upper)[keep], schema, model_hash, tag)


def match_rules(rules: WhitelistRuleSet, x):
    lab = rules.match(x)
    return int(lab[0]) if np.ndim(x) == 1 else lab


def rules_consistency(rules: WhitelistRuleSet, model, X_eval, theta_if: float | None = None) -> float:
    """Share of X_eval where the rules agree with the predictor that labelled the cubes."""
    X_eval = np.atleast_2d(np.asarray(X_eval, dtype=float))
    if len(X_eval) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(rules.match(X_eval) == _predictor(model, theta_if)(X_eval)))


@dataclass
class CompileReport:
    n_cubes: int
    n_merged: int
    n_rules: int
    branch_sizes: list[int] = field(default_factory=list)


def compile_rules(model, cap: int = DEFAULT_CUBE_CAP, keep_float: Sequence[str] = (),
                  theta_if: float | None = None, tag: str = "bl"
                  ) -> tuple[WhitelistRuleSet, HypercubeSet, CompileReport]:
    """Branch sets -> floored grid -> labels -> merge -> whitelist."""
    forest = _forest(model)
    schema = forest.schema
    branches = shift_integer_boundaries(extract_branch_sets(model), schema, keep_float)
    grid = label_hypercubes(build_hypercube_grid(branches, schema, cap), model, theta_if)
    lo, hi, lab = grid.cube_list()
    lo, hi, lab = merge_adjacent(lo[lab == 0], hi[lab == 0], lab[lab == 0])
    rules = emit_whitelist(lo, hi, lab, schema, model.model_hash(), tag)
    report = CompileReport(grid.n_cubes, len(lab), len(rules), [len(b) for b in branches])
    return rules, grid, report


# --- PL + BL ---------------------------------------------------------------

@dataclass
class CombinedRuleSet:
    """Rules for burst features and for per-packet features, kept as two tagged sets."""

    bl: WhitelistRuleSet
    pl: WhitelistRuleSet
    shared: tuple[str, ...] = ()

    def match_bl(self, x) -> int:
        return int(self.bl.match(x)[0])

    def match_pl(self, x) -> int:
        return int(self.pl.match(x)[0])

    def to_json(self) -> dict:
        return {"format": "burstwall.combined_rules/1", "shared": list(self.shared),
                "bl": self.bl.to_json(), "pl": self.pl.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "CombinedRuleSet":
        if d.get("format") != "burstwall.combined_rules/1":
            raise ValueError("not a combined rule file")
        return cls(WhitelistRuleSet.from_json(d["bl"]), WhitelistRuleSet.from_json(d["pl"]),
                   tuple(d.get("shared", ())))


def merge_rule_sets(bl_rules: WhitelistRuleSet, pl_rules: WhitelistRuleSet,
                    shared: Sequence[str] = ()) -> CombinedRuleSet:
    overlap = set(bl_rules.schema.names) & set(pl_rules.schema.names)
    undeclared = overlap - set(shared)
    if undeclared:
        raise RuleGenError(f"features {sorted(undeclared)} appear in both schemas; declare them shared")
    bl = WhitelistRuleSet(bl_rules.lower, bl_rules.upper, bl_rules.schema, bl_rules.model_hash, "bl")
    pl = WhitelistRuleSet(pl_rules.lower, pl_rules.upper, pl_rules.schema, pl_rules.model_hash, "pl")
    return CombinedRuleSet(bl, pl, tuple(sorted(overlap)))
