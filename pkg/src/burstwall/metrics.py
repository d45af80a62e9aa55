"""Packet-level detection metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    tpr: float
    tnr: float
    fpr: float
    fnr: float
    pr_auc: float
    n_packets: int
    n_malicious: int
    n_benign: int
    collisions: int = 0
    per_tag: dict = field(default_factory=dict)   # tag -> TPR
    macro_tpr: float = float("nan")

    def to_json(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}


def pr_auc(y_true, score) -> float:
    """Area under the precision-recall curve by the trapezoid rule.

    One curve point per distinct score (descending), starting from recall 0
    at precision 1.
    """
    y = np.asarray(y_true, dtype=np.int64)
    s = np.asarray(score, dtype=float)
    P = int(y.sum())
    if P == 0:
        return float("nan")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = np.r_[1.0, tp / (tp + fp)]
    recall = np.r_[0.0, tp / P]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2))


def evaluate(y_true, y_pred, score=None, tags=None, collisions: int = 0) -> MetricsReport:
    y = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if y.shape != p.shape:
        raise ValueError("labels and predictions differ in length")
    pos, neg = y == 1, y == 0
    tpr = float(p[pos].mean()) if pos.any() else float("nan")
    tnr = float(1 - p[neg].mean()) if neg.any() else float("nan")
    auc = pr_auc(y, p if score is None else score)
    per_tag = {}
    if tags is not None:
        tags = np.asarray(tags, dtype=object)
        for t in sorted({t for t, m in zip(tags, pos) if m}):
            sel = pos & (tags == t)
            per_tag[str(t)] = float(p[sel].mean())
    macro = float(np.mean(list(per_tag.values()))) if per_tag else tpr
    return MetricsReport(tpr, tnr, 1 - tnr, 1 - tpr, auc, len(y), int(pos.sum()), int(neg.sum()),
                         collisions, per_tag, macro)


def read_verdict_log(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """(y_true, y_pred, score, collisions) from a verdict log with prediction fields."""
    y, pred, score = [], [], []
    collisions = 0
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            if d.get("ground_truth") not in ("benign", "malicious"):
                raise ValueError(f"line {n}: packet carries no ground truth")
            y.append(int(d["ground_truth"] == "malicious"))
            pred.append(int(d["pred"]))
            score.append(float(d["score"]))
            collisions += bool(d.get("collision"))
    return np.array(y, dtype=np.int64), np.array(pred, dtype=np.int64), np.array(score), collisions
