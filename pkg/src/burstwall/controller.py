"""Control-plane logic: blacklisting by abnormal frequency, eviction, model
refresh from mirrored benign bursts, and the configuration profiler."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pipeline import BlacklistTable, Digest, Pipeline
from .traffic import FiveTuple

log = logging.getLogger(__name__)

POLICIES = ("FIFO", "LRU")


@dataclass
class FlowStats:
    n_bursts: int = 0
    malicious: int = 0
    last_seen_ns: int = 0

    @property
    def abnormal_frequency(self) -> float:
        return self.malicious / self.n_bursts if self.n_bursts else 0.0


def on_digest(d: Digest, stats: dict[FiveTuple, FlowStats], tau: float = 0.5) -> str | None:
    """Record a digest; return "install" when the flow should be blacklisted.

    A flow qualifies once its share of malicious bursts exceeds ``tau`` and it
    has produced more than one burst.
    """
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    key = d.five_tuple.canonical()
    fs = stats.setdefault(key, FlowStats())
    fs.n_bursts += 1
    fs.malicious += d.verdict == "malicious"
    fs.last_seen_ns = d.ts_ns
    if fs.abnormal_frequency > tau and fs.n_bursts > 1:
        return "install"
    return None


def evict(blacklist: BlacklistTable, policy: str = "FIFO") -> list[FiveTuple]:
    """Free one entry of a full table: oldest install (FIFO) or oldest hit (LRU)."""
    if policy not in POLICIES:
        raise ValueError(f"unknown eviction policy {policy!r}")
    if not blacklist.full:
        return []
    field_ = "installed_ns" if policy == "FIFO" else "last_hit_ns"
    victim = min(blacklist.entries.items(),
                 key=lambda kv: (kv[1][field_], kv[1]["seq"] if policy == "FIFO" else 0, kv[0]))[0]
    blacklist.remove(victim)
    return [victim]


def stats_from_digests(digests: Sequence[Digest]) -> dict[FiveTuple, FlowStats]:
    """Rebuild per-flow statistics from a digest log."""
    stats: dict[FiveTuple, FlowStats] = {}
    for d in digests:
        key = d.five_tuple.canonical()
        fs = stats.setdefault(key, FlowStats())
        fs.n_bursts += 1
        fs.malicious += d.verdict == "malicious"
        fs.last_seen_ns = d.ts_ns
    return stats


class Controller:
    """Digest consumer that installs blacklist entries into a pipeline."""

    def __init__(self, tau: float = 0.5, policy: str = "FIFO", updater: "OnlineUpdater | None" = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown eviction policy {policy!r}")
        self.tau = tau
        self.policy = policy
        self.updater = updater
        self.stats: dict[FiveTuple, FlowStats] = {}
        self.installed: list[tuple[int, FiveTuple]] = []
        self.evicted: list[tuple[int, FiveTuple]] = []

    def __call__(self, d: Digest, pipe: Pipeline) -> None:
        if on_digest(d, self.stats, self.tau) == "install" and d.five_tuple not in pipe.blacklist:
            for v in evict(pipe.blacklist, self.policy):
                self.evicted.append((d.ts_ns, v))
            pipe.blacklist.install(d.five_tuple, d.ts_ns)
            self.installed.append((d.ts_ns, d.five_tuple.canonical()))
        if self.updater is not None:
            self.updater.maybe_update(pipe)

    @staticmethod
    def write_blacklist(pipe: Pipeline, path) -> None:
        with open(path, "w") as fh:
            for row in pipe.blacklist.snapshot():
                fh.write(json.dumps(row, sort_keys=True) + "\n")


# --- online refresh --------------------------------------------------------

@dataclass(frozen=True)
class OnlineConfig:
    batch: int = 10_000          # new mirrored bursts that trigger a retrain
    window: int = 50_000         # rolling training window
    t: int = 10
    psi: int = 128
    k: int = 50
    seed: int = 0
    cube_cap: int = 10**7


class OnlineUpdater:
    """Retrain the distilled forest on mirrored benign bursts and swap in new rules."""

    def __init__(self, cfg: OnlineConfig, teacher, schema, combiner: str = "product",
                 theta_if: float = 0.5):
        self.cfg = cfg
        self.teacher = teacher
        self.schema = schema
        self.combiner = combiner
        self.theta_if = theta_if
        self.window: deque = deque(maxlen=cfg.window)
        self._consumed = 0
        self._pending = 0
        self.history: list[str] = []

    def ingest(self, rows) -> None:
        for r in rows:
            self.window.append(np.asarray(r, dtype=float))
            self._pending += 1

    def retrain(self):
        """Fit on the current window; returns (distilled forest, BL rules)."""
        from .distill import embed_leaves
        from .iforest import train_iforest
        from .rulegen import compile_rules
        X = np.array(self.window)
        psi = min(self.cfg.psi, len(X))
        forest = train_iforest(X, self.cfg.t, psi, self.cfg.seed, self.schema)
        df = embed_leaves(forest, self.teacher, X, self.cfg.k, self.cfg.seed,
                          self.combiner, self.theta_if)
        rules, _, _ = compile_rules(df, cap=self.cfg.cube_cap)
        return df, rules

    def maybe_update(self, pipe: Pipeline) -> bool:
        new = pipe.cpu_mirror[self._consumed:]
        self._consumed = len(pipe.cpu_mirror)
        self.ingest(new)
        if self._pending < self.cfg.batch or len(self.window) < 2:
            return False
        self._pending = 0
        try:
            _, rules = self.retrain()
        except Exception as exc:  # keep serving the old rules
            log.warning("online retrain failed, keeping current rules: %s", exc)
            return False
        from .rulegen import merge_rule_sets
        pipe.swap_rules(merge_rule_sets(rules, pipe.rules.pl, pipe.rules.shared))
        self.history.append(rules.digest())
        return True


# --- profiler --------------------------------------------------------------

@dataclass(frozen=True)
class CandidateMetrics:
    tpr: float
    tnr: float
    pr_auc: float
    rules_used: int
    register_bits: int


@dataclass
class ProfilerConfig:
    grid: dict = field(default_factory=dict)   # name -> list of values
    alpha: float = 0.5
    rule_capacity: int = 10_000
    register_capacity: int = 2**27

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.rule_capacity <= 0 or self.register_capacity <= 0:
            raise ValueError("capacities must be positive")

    def candidates(self) -> list[dict]:
        names = sorted(self.grid)
        return [dict(zip(names, vals)) for vals in itertools.product(*(self.grid[n] for n in names))]


def resource_fraction(m: CandidateMetrics, cfg: ProfilerConfig) -> float:
    return (m.rules_used / cfg.rule_capacity + m.register_bits / cfg.register_capacity) / 2


def reward(m: CandidateMetrics, cfg: ProfilerConfig) -> float:
    rho = resource_fraction(m, cfg)
    return cfg.alpha / 3 * (m.tpr + m.tnr + m.pr_auc) + (1 - cfg.alpha) * (1 - rho)


@dataclass
class ProfileRow:
    candidate: dict
    metrics: CandidateMetrics
    rho: float
    reward: float


def profile(cfg: ProfilerConfig, evaluator: Callable[[dict], CandidateMetrics]
            ) -> tuple[dict, list[ProfileRow]]:
    """Evaluate every grid point; best = highest reward, ties to the smaller footprint."""
    rows = []
    for cand in cfg.candidates():
        m = evaluator(cand)
        rows.append(ProfileRow(cand, m, resource_fraction(m, cfg), reward(m, cfg)))
    if not rows:
        raise ValueError("empty profiler grid")
    best = max(range(len(rows)), key=lambda i: (rows[i].reward, -rows[i].rho, -i))
    return rows[best].candidate, rows


def write_profile_tsv(rows: Sequence[ProfileRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["config", "TPR", "TNR", "PR_AUC", "rho", "reward"])
        for r in rows:
            w.writerow([json.dumps(r.candidate, sort_keys=True), r.metrics.tpr, r.metrics.tnr,
                        r.metrics.pr_auc, r.rho, r.reward])


def register_bits(index_bits: tuple[int, int], n_bl_features: int, ts_bits: int = 32) -> int:
    """Register memory of the two flow tables.

    Per slot: a 32-bit flow ID, two timestamps, an 8-bit packet counter and a
    sum and sum of squares of 32 bits for each burst feature.
    """
    per_slot = 32 + 2 * ts_bits + 8 + 64 * n_bl_features
    return sum(2**a for a in index_bits) * per_slot
