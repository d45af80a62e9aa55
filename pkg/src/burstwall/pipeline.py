"""Packet-by-packet model of the switch program.

Per packet: blacklist lookup, double-table placement, timeout checks, burst
accumulation, whitelist matching of closed bursts with a digest to the
controller, and the per-packet whitelist check. Register arrays are touched
through an access monitor so the one-access-per-pass rule is enforced.
"""

from __future__ import annotations

import heapq
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .burst import (AccessMonitor, BiHashConfig, BurstConfig, BurstEngine, Closed,
                    CollisionFallback, pl_vector)
from .rulegen import CombinedRuleSet
from .traffic import FiveTuple, PacketRecord

STRATEGIES = ("atomic", "resubmit_all")
OUTCOMES = ("forwarded", "dropped_blacklist", "dropped_pl", "flagged")


@dataclass
class PipelineConfig:
    rules: CombinedRuleSet
    hash_cfg: BiHashConfig = field(default_factory=BiHashConfig)
    burst_cfg: BurstConfig = field(default_factory=BurstConfig)
    blacklist_capacity: int = 1024
    strategy: str = "atomic"
    arithmetic: str = "exact"
    logexp_s: int = 8
    digest_normal: bool = True
    digest_delay_ns: int = 0

    def __post_init__(self):
        if self.blacklist_capacity < 1:
            raise ValueError("blacklist capacity must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.digest_delay_ns < 0:
            raise ValueError("digest delay cannot be negative")


@dataclass(frozen=True)
class Digest:
    five_tuple: FiveTuple
    verdict: str           # normal | malicious
    ts_ns: int
    features: dict
    burst_uid: int


@dataclass
class PipelineStats:
    packets_in: int = 0
    resubmissions: int = 0
    mirrors_to_loopback: int = 0
    mirrors_to_cpu: int = 0
    collisions: int = 0
    blacklist_hits: int = 0
    digests: int = 0
    bursts_closed: int = 0
    verdicts: dict = field(default_factory=lambda: {o: 0 for o in OUTCOMES})

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class VerdictEntry:
    ts_ns: int
    flow: FiveTuple
    outcome: str
    ground_truth: str | None
    burst_uid: int | None
    pl_verdict: int
    collision: bool

    def to_json(self) -> dict:
        return {"ts_ns": self.ts_ns, "flow": self.flow.to_json(), "outcome": self.outcome,
                "ground_truth": self.ground_truth, "burst_uid": self.burst_uid,
                "pl_verdict": self.pl_verdict, "collision": self.collision}


@dataclass
class BurstRecord:
    uid: int
    flow: FiveTuple          # canonical
    index: int               # per-flow burst sequence number
    verdict: int             # 0 normal, 1 malicious
    score: float
    reason: str
    pkt_count: int
    vector: np.ndarray
    placement: tuple[int, int]


class BlacklistTable:
    """Exact-match table keyed on the direction-independent 5-tuple."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: dict[FiveTuple, dict] = {}
        self._seq = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, t: FiveTuple) -> bool:
        return t.canonical() in self.entries

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def lookup(self, t: FiveTuple, now_ns: int) -> bool:
        e = self.entries.get(t.canonical())
        if e is None:
            return False
        e["last_hit_ns"] = now_ns
        return True

    def install(self, t: FiveTuple, now_ns: int) -> bool:
        """Add an entry; False when the table is full (the controller evicts first)."""
        key = t.canonical()
        if key in self.entries:
            return True
        if self.full:
            return False
        self._seq += 1
        self.entries[key] = {"installed_ns": now_ns, "last_hit_ns": now_ns, "seq": self._seq}
        return True

    def remove(self, t: FiveTuple) -> None:
        self.entries.pop(t.canonical(), None)

    def snapshot(self) -> list[dict]:
        return [{**k.to_json(), **v} for k, v in sorted(self.entries.items(), key=lambda kv: kv[1]["seq"])]


Hook = Callable[[Digest, "Pipeline"], None]


class Pipeline:
    def __init__(self, cfg: PipelineConfig, scorer: Callable[[np.ndarray], float] | None = None):
        self.cfg = cfg
        self.rules = cfg.rules
        self.scorer = scorer
        self.monitor = AccessMonitor(strict=True)
        self.engine = BurstEngine(cfg.hash_cfg, cfg.burst_cfg, cfg.arithmetic, cfg.logexp_s,
                                  self.monitor, auto_clear=False)
        self.blacklist = BlacklistTable(cfg.blacklist_capacity)
        self.stats = PipelineStats()
        self.bursts: dict[int, BurstRecord] = {}
        self.cpu_mirror: list[np.ndarray] = []
        self._uid_flow: dict[int, tuple[FiveTuple, tuple[int, int]]] = {}
        self._flow_bursts: Counter = Counter()
        self._last_ts = -1

    # rule swaps happen between packets
    def swap_rules(self, rules: CombinedRuleSet) -> None:
        self.rules = rules

    def _close(self, closed: Closed, now_ns: int, emit: bool = True) -> tuple[int, Digest | None]:
        """Match a finished burst against the BL whitelist; return the verdict and digest."""
        flow, placement = self._uid_flow.pop(closed.burst_uid)
        vec = closed.features.vector(self.rules.bl.schema)
        verdict = self.rules.match_bl(vec)
        score = float(self.scorer(vec)) if self.scorer else float(verdict)
        index = self._flow_bursts[flow]
        self._flow_bursts[flow] += 1
        self.bursts[closed.burst_uid] = BurstRecord(closed.burst_uid, flow, index, verdict, score,
                                                    closed.reason, closed.pkt_count, vec, placement)
        self.stats.bursts_closed += 1
        if not emit:
            return verdict, None
        if verdict == 0:
            self.stats.mirrors_to_cpu += 1
            self.cpu_mirror.append(vec)
            if not self.cfg.digest_normal:
                return verdict, None
        self.stats.digests += 1
        return verdict, Digest(flow, "malicious" if verdict else "normal", now_ns,
                               closed.features.to_json(), closed.burst_uid)

    def process_packet(self, p: PacketRecord) -> tuple[VerdictEntry, list[Digest]]:
        if p.ts_ns < self._last_ts:
            raise ValueError(f"packet at {p.ts_ns} ns arrives before {self._last_ts} ns")
        self._last_ts = p.ts_ns
        st = self.stats
        st.packets_in += 1
        if self.cfg.strategy == "resubmit_all":
            st.resubmissions += 1
        self.monitor.begin_pass()
        if self.blacklist.lookup(p.five_tuple, p.ts_ns):
            st.blacklist_hits += 1
            st.verdicts["dropped_blacklist"] += 1
            return VerdictEntry(p.ts_ns, p.five_tuple, "dropped_blacklist", p.ground_truth,
                                None, 1, False), []
        res = self.engine.ingest_packet(p)
        digests = []
        collision = any(isinstance(e, CollisionFallback) for e in res.events)
        malicious_close = False
        if collision:
            st.collisions += 1
        else:
            pl = res.placement
            for e in res.events:
                if isinstance(e, Closed):
                    verdict, d = self._close(e, p.ts_ns)
                    malicious_close |= verdict == 1
                    if d is not None:
                        digests.append(d)
            if res.burst_uid is not None and res.burst_uid not in self.bursts:
                self._uid_flow.setdefault(res.burst_uid, (p.five_tuple.canonical(), (pl.table, pl.index)))
            if res.needs_clear:
                if self.cfg.strategy == "atomic":
                    st.mirrors_to_loopback += 1
                self.monitor.begin_pass()
                self.engine.clear_slot(pl.table, pl.index)
        pl_verdict = self.rules.match_pl(pl_vector(p, self.rules.pl.schema))
        if pl_verdict:
            outcome = "dropped_pl"
        elif malicious_close:
            outcome = "flagged"
        else:
            outcome = "forwarded"
        st.verdicts[outcome] += 1
        return VerdictEntry(p.ts_ns, p.five_tuple, outcome, p.ground_truth,
                            None if collision else res.burst_uid, pl_verdict, collision), digests

    def flush(self) -> list[Digest]:
        """Close every open burst at end of trace.

        Bursts of flows blacklisted meanwhile get a verdict but no digest: no
        packet of theirs can reach the burst logic again to close them.
        """
        now = max(self._last_ts, 0)
        out = []
        for _, closed in self.engine.flush():
            flow = self._uid_flow[closed.burst_uid][0]
            _, d = self._close(closed, now, emit=flow not in self.blacklist)
            if d is not None:
                out.append(d)
        return out


@dataclass
class ReplayResult:
    log: list[VerdictEntry]
    digests: list[Digest]
    stats: PipelineStats
    bursts: dict[int, BurstRecord]

    def packet_predictions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(y_true, y_pred, score) per packet.

        A burst verdict covers all packets of the burst, collided packets take
        their per-packet verdict and blacklisted packets count as malicious.
        """
        y, pred, score = [], [], []
        for e in self.log:
            if e.ground_truth is None:
                raise ValueError(f"packet at {e.ts_ns} ns carries no ground truth")
            y.append(int(e.ground_truth == "malicious"))
            if e.outcome == "dropped_blacklist":
                pred.append(1)
                score.append(1.0)
            elif e.collision or e.burst_uid is None:
                pred.append(e.pl_verdict)
                score.append(float(e.pl_verdict))
            else:
                b = self.bursts[e.burst_uid]
                pred.append(b.verdict)
                score.append(b.score)
        return np.array(y, dtype=np.int64), np.array(pred, dtype=np.int64), np.array(score)

    def write_log(self, path) -> None:
        """JSONL, one packet per line, with the packet-level prediction and score."""
        has_truth = all(e.ground_truth is not None for e in self.log)
        if has_truth:
            _, pred, score = self.packet_predictions()
        with open(path, "w") as fh:
            for i, e in enumerate(self.log):
                d = e.to_json()
                if has_truth:
                    d.update(pred=int(pred[i]), score=float(score[i]))
                fh.write(json.dumps(d, sort_keys=True) + "\n")

    def write_stats(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.stats.to_json(), fh, indent=2, sort_keys=True)


def replay_trace(trace: Iterable[PacketRecord], cfg: PipelineConfig, hook: Hook | None = None,
                 scorer=None, pipeline: Pipeline | None = None) -> ReplayResult:
    """Run a trace through a pipeline, delivering digests to ``hook``.

    With ``digest_delay_ns`` > 0 a digest reaches the hook only once a packet
    at least that much later has arrived (or at the end of the trace).
    """
    pipe = pipeline or Pipeline(cfg, scorer)
    delay = cfg.digest_delay_ns
    log, all_digests = [], []
    pending: list = []
    seq = 0

    def deliver(upto):
        while pending and pending[0][0] <= upto:
            _, _, d = heapq.heappop(pending)
            hook(d, pipe)

    for p in trace:
        if hook is not None:
            deliver(p.ts_ns)
        entry, digests = pipe.process_packet(p)
        log.append(entry)
        for d in digests:
            all_digests.append(d)
            if hook is None:
                continue
            if delay == 0:
                hook(d, pipe)
            else:
                seq += 1
                heapq.heappush(pending, (d.ts_ns + delay, seq, d))
    for d in pipe.flush():
        all_digests.append(d)
        if hook is not None:
            seq += 1
            heapq.heappush(pending, (d.ts_ns + delay, seq, d))
    if hook is not None:
        deliver(float("inf"))
    return ReplayResult(log, all_digests, pipe.stats, pipe.bursts)


@dataclass
class StrategyReport:
    packets: int
    resubmissions_resubmit_all: int
    loopback_mirrors_atomic: int
    resubmit_fraction: float
    mirror_fraction: float
    reduction: float

    def to_json(self) -> dict:
        return asdict(self)


def compare_strategies(trace: list[PacketRecord], cfg: PipelineConfig) -> StrategyReport:
    """Replay under both register strategies and compare extra pipeline passes."""
    from dataclasses import replace
    full = replay_trace(trace, replace(cfg, strategy="resubmit_all")).stats
    atomic = replay_trace(trace, replace(cfg, strategy="atomic")).stats
    n = full.packets_in
    rf = full.resubmissions / n if n else 0.0
    mf = atomic.mirrors_to_loopback / n if n else 0.0
    red = 1.0 - atomic.mirrors_to_loopback / full.resubmissions if full.resubmissions else 0.0
    return StrategyReport(n, full.resubmissions, atomic.mirrors_to_loopback, rf, mf, red)


def offline_verdicts(trace: Iterable[PacketRecord], rules: CombinedRuleSet,
                     burst_cfg: BurstConfig | None = None) -> dict[tuple[FiveTuple, int], int]:
    """Reference verdicts: hash-free segmentation, exact features, rule match."""
    from .burst import segment_flows
    out = {}
    for b in segment_flows(trace, burst_cfg):
        out[(b.flow, b.index)] = rules.match_bl(b.features("exact").vector(rules.bl.schema))
    return out


def equivalence_check(result: ReplayResult, trace: list[PacketRecord], rules: CombinedRuleSet,
                      burst_cfg: BurstConfig | None = None) -> tuple[int, int]:
    """(compared, mismatched) burst verdicts over flows that never collided
    and kept a single slot."""
    collided = {e.flow.canonical() for e in result.log if e.collision}
    slots: dict[FiveTuple, set] = {}
    for b in result.bursts.values():
        slots.setdefault(b.flow, set()).add(b.placement)
    clean = {f for f, s in slots.items() if len(s) == 1 and f not in collided}
    ref = offline_verdicts([p for p in trace if p.five_tuple.canonical() in clean], rules, burst_cfg)
    compared = mismatched = 0
    for b in result.bursts.values():
        if b.flow not in clean:
            continue
        compared += 1
        mismatched += ref.get((b.flow, b.index)) != b.verdict
    missing = len(ref) - compared
    return compared, mismatched + max(missing, 0)
