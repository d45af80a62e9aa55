"""Burst segmentation over a bi-hashed double hash table.

The engine keeps per-slot state in register arrays and follows the data-plane
access discipline: every array is touched at most once per packet pass, using
read-modify-write actions. ``segment_flows`` is the plain per-flow reference
used for offline feature extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .traffic import FeatureSchema, FiveTuple, PacketRecord

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF
_M1 = 0xFF51AFD7ED558CCD
_M2 = 0xC4CEB9FE1A85EC53


# --- hashing ---------------------------------------------------------------

@dataclass(frozen=True)
class BiHashConfig:
    seed1: int = 0x5BD1E995
    seed2: int = 0x1B873593
    seed_id: int = 0x2545F491
    a1: int = 16
    a2: int = 16

    def __post_init__(self):
        for a in (self.a1, self.a2):
            if not 1 <= a <= 24:
                raise ValueError(f"index width must be in [1, 24], got {a}")

    def seed(self, which: str) -> int:
        return {"H": self.seed_id, "H1": self.seed1, "H2": self.seed2}[which]


def _fmix64(k: int) -> int:
    k ^= k >> 33
    k = (k * _M1) & MASK64
    k ^= k >> 33
    k = (k * _M2) & MASK64
    k ^= k >> 33
    return k


def _side_hash(ip: int, port: int, proto: int, seed: int) -> int:
    key = (ip << 24) | (port << 8) | proto
    return _fmix64(key ^ _fmix64(seed & MASK64)) >> 32


def bi_hash(t: FiveTuple, cfg: BiHashConfig, which: str = "H") -> int:
    """Direction-symmetric 32-bit hash: side(dst) XOR side(src) under one seed."""
    seed = cfg.seed(which)
    return (_side_hash(t.dst_ip, t.dst_port, t.protocol, seed)
            ^ _side_hash(t.src_ip, t.src_port, t.protocol, seed))


def _fmix64_np(k: np.ndarray) -> np.ndarray:
    k = k ^ (k >> np.uint64(33))
    k = k * np.uint64(_M1)
    k = k ^ (k >> np.uint64(33))
    k = k * np.uint64(_M2)
    return k ^ (k >> np.uint64(33))


def bi_hash_array(src_ip, dst_ip, src_port, dst_port, protocol, cfg: BiHashConfig,
                  which: str = "H") -> np.ndarray:
    """Vectorised :func:`bi_hash` over column arrays; returns uint64 holding 32-bit values."""
    s = _fmix64_np(np.array([cfg.seed(which) & MASK64], dtype=np.uint64))[0]
    proto = np.asarray(protocol, dtype=np.uint64)

    def side(ip, port):
        key = ((np.asarray(ip, dtype=np.uint64) << np.uint64(24))
               | (np.asarray(port, dtype=np.uint64) << np.uint64(8)) | proto)
        return _fmix64_np(key ^ s) >> np.uint64(32)

    with np.errstate(over="ignore"):
        return side(dst_ip, dst_port) ^ side(src_ip, src_port)


def flow_id(t: FiveTuple, cfg: BiHashConfig) -> int:
    # 0 marks a free slot, so a zero hash is remapped
    return bi_hash(t, cfg, "H") or 1


# --- registers -------------------------------------------------------------

class RegisterAccessError(RuntimeError):
    pass


class AccessMonitor:
    """Counts register-array accesses within one pipeline pass."""

    def __init__(self, strict: bool = True):
        self.strict = strict
        self.counts: dict[str, int] = {}
        self.max_seen = 0

    def begin_pass(self):
        self.counts = {}

    def touch(self, name: str):
        n = self.counts.get(name, 0) + 1
        self.counts[name] = n
        self.max_seen = max(self.max_seen, n)
        if self.strict and n > 1:
            raise RegisterAccessError(f"register {name!r} accessed {n} times in one pass")


class RegisterArray:
    """Sparse register array; unset cells read as the zero value."""

    def __init__(self, name: str, zero=0, monitor: AccessMonitor | None = None):
        self.name = name
        self.zero = zero
        self.cells: dict[int, object] = {}
        self.monitor = monitor

    def execute(self, index: int, action: Callable):
        """Run ``action(value) -> (new_value, output)`` atomically on one cell."""
        if self.monitor is not None:
            self.monitor.touch(self.name)
        new, out = action(self.cells.get(index, self.zero))
        if new == self.zero:
            self.cells.pop(index, None)
        else:
            self.cells[index] = new
        return out

    def peek(self, index: int):
        return self.cells.get(index, self.zero)


# --- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class BurstConfig:
    delta_idle_ns: int = 1_000_000_000
    delta_active_ns: int = 15_000_000_000
    n_threshold: int = 15
    time_mode: str = "exact64"
    unit_ns: int = 2**16

    def __post_init__(self):
        if self.n_threshold < 2:
            raise ValueError("n_threshold must be at least 2")
        if self.time_mode not in ("exact64", "truncated32"):
            raise ValueError(f"unknown time mode {self.time_mode!r}")
        if self.time_mode == "truncated32":
            if self.unit_ns < 1:
                raise ValueError("unit_ns must be positive")
            for d in (self.delta_idle_ns, self.delta_active_ns):
                if d // self.unit_ns >= 2**31:
                    raise ValueError(f"threshold {d} ns does not fit 31 bits of {self.unit_ns} ns units")

    def register_time(self, ts_ns: int) -> int:
        if self.time_mode == "exact64":
            return ts_ns
        return (ts_ns // self.unit_ns) & MASK32

    def register_delta_ns(self, later: int, earlier: int) -> int:
        """Elapsed time between two register timestamps, in ns."""
        if self.time_mode == "exact64":
            return later - earlier
        return ((later - earlier) & MASK32) * self.unit_ns


def msb_timeout(threshold: int, duration: int) -> bool:
    """Data-plane comparison duration > threshold via the sign bit of a 32-bit subtraction."""
    return ((threshold - duration) & MASK32) >> 31 == 1


# --- slot state ------------------------------------------------------------

@dataclass(frozen=True)
class BLAccum:
    """Burst-level accumulators held in one register cell."""

    n: int = 0
    size_sum: int = 0
    size_sq: int = 0
    size_min: int = 0
    size_max: int = 0
    gap_n: int = 0
    gap_sum: int = 0
    gap_sq: int = 0
    gap_min: int = 0
    gap_max: int = 0
    # accumulator snapshots at the last power-of-two count, for shift arithmetic
    size_p2: tuple = (0, 0, 0)
    gap_p2: tuple = (0, 0, 0)
    dst_port: int = 0
    protocol: int = 0

    @classmethod
    def start(cls, p: PacketRecord) -> "BLAccum":
        L = p.ip_len
        return cls(n=1, size_sum=L, size_sq=L * L, size_min=L, size_max=L,
                   size_p2=(1, L, L * L), dst_port=p.five_tuple.dst_port,
                   protocol=p.five_tuple.protocol)

    def add(self, ip_len: int, gap_ns: int) -> "BLAccum":
        n = self.n + 1
        s, q = self.size_sum + ip_len, self.size_sq + ip_len * ip_len
        gn = self.gap_n + 1
        gs, gq = self.gap_sum + gap_ns, self.gap_sq + gap_ns * gap_ns
        return replace(
            self, n=n, size_sum=s, size_sq=q,
            size_min=min(self.size_min, ip_len), size_max=max(self.size_max, ip_len),
            gap_n=gn, gap_sum=gs, gap_sq=gq,
            gap_min=gap_ns if gn == 1 else min(self.gap_min, gap_ns),
            gap_max=max(self.gap_max, gap_ns),
            size_p2=(n, s, q) if n & (n - 1) == 0 else self.size_p2,
            gap_p2=(gn, gs, gq) if gn & (gn - 1) == 0 else self.gap_p2,
        )

    @classmethod
    def from_packets(cls, packets: Sequence[PacketRecord]) -> "BLAccum":
        acc = cls.start(packets[0])
        for prev, p in zip(packets, packets[1:]):
            acc = acc.add(p.ip_len, p.ts_ns - prev.ts_ns)
        return acc


@dataclass(frozen=True)
class BurstSlot:
    """Snapshot of one hash-table slot."""

    stored_flow_id: int = 0
    first_ts: int = 0
    last_ts: int = 0
    pkt_count: int = 0
    accum: BLAccum = field(default_factory=BLAccum)

    @property
    def free(self) -> bool:
        return self.stored_flow_id == 0


def check_timeouts(slot: BurstSlot, now_ns: int, cfg: BurstConfig) -> dict:
    """Idle/active timeout flags for a slot holding register-format timestamps."""
    now = cfg.register_time(now_ns)
    if cfg.time_mode == "exact64":
        return {"idle": now - slot.last_ts > cfg.delta_idle_ns,
                "active": slot.last_ts - slot.first_ts > cfg.delta_active_ns}
    idle_dur = (now - slot.last_ts) & MASK32
    active_dur = (slot.last_ts - slot.first_ts) & MASK32
    return {"idle": msb_timeout(cfg.delta_idle_ns // cfg.unit_ns, idle_dur),
            "active": msb_timeout(cfg.delta_active_ns // cfg.unit_ns, active_dur)}


# --- features --------------------------------------------------------------

BL_CATALOGUE = (
    "pkt_count", "burst_size", "duration_us",
    "mean_size", "min_size", "max_size", "var_size", "std_size",
    "mean_ipd_us", "min_ipd_us", "max_ipd_us", "var_ipd_us", "std_ipd_us",
    "dst_port", "protocol",
)
PL_CATALOGUE = ("dst_port", "src_port", "protocol", "ip_len")


@dataclass(frozen=True)
class BurstFeatures:
    values: dict

    def vector(self, schema: FeatureSchema) -> np.ndarray:
        return schema.saturate([self.values[name] for name in schema.names])

    def to_json(self) -> dict:
        return {k: (int(v) if float(v).is_integer() else float(v)) for k, v in self.values.items()}


def pl_vector(p: PacketRecord, schema: FeatureSchema) -> np.ndarray:
    """Per-packet features of one packet, ordered by ``schema``."""
    t = p.five_tuple
    values = {"dst_port": t.dst_port, "src_port": t.src_port, "protocol": t.protocol, "ip_len": p.ip_len}
    return schema.saturate([values[name] for name in schema.names])


def _mean_var(total: int, sq: int, n: int) -> tuple[Fraction, Fraction]:
    mean = Fraction(total, n)
    return mean, Fraction(n * sq - total * total, n * n)


def _fsqrt(x: Fraction) -> float:
    return math.sqrt(x.numerator / x.denominator) if x > 0 else 0.0


def finalize_burst_features(acc: BLAccum, first_ns: int, last_ns: int,
                            mode: str = "exact", s: int = 8) -> BurstFeatures:
    """Turn slot accumulators into the burst feature catalogue.

    ``mode`` selects how the division-based statistics are obtained: ``exact``
    uses rational arithmetic, ``shift`` reads the power-of-two snapshots
    (hardware right shift), ``logexp`` uses table-driven log/exp division.
    """
    if acc.n < 1:
        raise ValueError("burst has no packets")
    v = {"pkt_count": acc.n, "burst_size": acc.size_sum,
         "duration_us": (last_ns - first_ns) / 1000,
         "min_size": acc.size_min, "max_size": acc.size_max,
         "min_ipd_us": acc.gap_min / 1000, "max_ipd_us": acc.gap_max / 1000,
         "dst_port": acc.dst_port, "protocol": acc.protocol}
    if mode == "exact":
        m, var = _mean_var(acc.size_sum, acc.size_sq, acc.n)
        v.update(mean_size=float(m), var_size=float(var), std_size=_fsqrt(var))
        if acc.gap_n:
            gm, gv = _mean_var(acc.gap_sum, acc.gap_sq, acc.gap_n)
            v.update(mean_ipd_us=float(gm / 1000), var_ipd_us=float(gv / 10**6),
                     std_ipd_us=_fsqrt(gv) / 1000)
        else:
            v.update(mean_ipd_us=0.0, var_ipd_us=0.0, std_ipd_us=0.0)
    elif mode == "shift":
        n, t, q = acc.size_p2
        avg, _, var, std = approx_stats_shift(t, q, n, max_count=2**15)
        v.update(mean_size=avg, var_size=var, std_size=std)
        n, t, q = acc.gap_p2
        if n:
            avg, _, var, std = approx_stats_shift(t, q, n, max_count=2**15)
            v.update(mean_ipd_us=avg // 1000, var_ipd_us=var // 10**6, std_ipd_us=std // 1000)
        else:
            v.update(mean_ipd_us=0, var_ipd_us=0, std_ipd_us=0)
    elif mode == "logexp":
        dom = 2**64
        avg = approx_divide_logexp(acc.size_sum, acc.n, s, domain=dom)
        avg_sq = approx_divide_logexp(acc.size_sq, acc.n, s, domain=dom)
        var = max(0, avg_sq - avg * avg)
        v.update(mean_size=avg, var_size=var, std_size=math.isqrt(var))
        if acc.gap_n and acc.gap_sum:
            g = approx_divide_logexp(acc.gap_sum, acc.gap_n, s, domain=dom)
            gsq = approx_divide_logexp(max(acc.gap_sq, 1), acc.gap_n, s, domain=dom)
            gvar = max(0, gsq - g * g)
            v.update(mean_ipd_us=g // 1000, var_ipd_us=gvar // 10**6,
                     std_ipd_us=math.isqrt(gvar) // 1000)
        else:
            v.update(mean_ipd_us=0, var_ipd_us=0, std_ipd_us=0)
    else:
        raise ValueError(f"unknown arithmetic mode {mode!r}")
    return BurstFeatures(v)


# --- division approximations ----------------------------------------------

SHIFT_COUNTS = (1, 2, 4, 8, 16)


def trunc_msb(x: int, bits: int = 4) -> int:
    """Keep the leading ``bits`` significant bits of x, zeroing the rest."""
    drop = max(0, x.bit_length() - bits)
    return (x >> drop) << drop


def mathunit_square(x: int) -> int:
    return trunc_msb(x * x)


def mathunit_isqrt(x: int) -> int:
    return trunc_msb(math.isqrt(x))


def approx_stats_shift(burst_size: int, sum_sq: int, pkt_count: int,
                       max_count: int = 16) -> tuple[int, int, int, int]:
    """Mean / mean-square / variance / std at a power-of-two packet count.

    Division is a right shift. Square and square root go through the math-unit
    emulation, whose results keep only 4 significant bits; the mean square is
    held in the same format so the difference of equal quantities is zero.
    """
    if pkt_count < 1 or pkt_count & (pkt_count - 1) or pkt_count > max_count:
        raise ValueError(f"pkt_count must be a power of two <= {max_count}, got {pkt_count}")
    k = pkt_count.bit_length() - 1
    avg = burst_size >> k
    avg_sq = sum_sq >> k
    var = max(0, trunc_msb(avg_sq) - mathunit_square(avg))
    return avg, avg_sq, var, mathunit_isqrt(var)


def _log_index(a: int, s: int) -> int:
    # floor(s * log2(a)) exactly: largest i with 2**i <= a**s
    return (a**s).bit_length() - 1


def log_table_entries(s: int = 1, domain: int = 2**16) -> list[tuple[int, int, int]]:
    """Range-match entries (lo, hi, i) mapping every a in [lo, hi] to floor(s*log2 a)."""
    entries = []
    imax = _log_index(domain - 1, s)
    lo = 1
    for i in range(imax + 1):
        # smallest a with a**s >= 2**(i+1)
        hi_next = _iroot_ceil(2 ** (i + 1), s)
        hi = min(hi_next - 1, domain - 1)
        if hi >= lo:
            entries.append((lo, hi, i))
            lo = hi + 1
    return entries


def _iroot_ceil(x: int, s: int) -> int:
    r = int(round(x ** (1.0 / s)))
    while r**s < x:
        r += 1
    while r > 1 and (r - 1) ** s >= x:
        r -= 1
    return r


def exp_table_value(d: int, s: int, frac_bits: int = 0, literal_floor: bool = False) -> int:
    """Exact-match exponent entry for index difference d, as a fixed-point integer."""
    if literal_floor:
        e = d // s + frac_bits
        return 2**e if e >= 0 else 0
    return int(round(2.0 ** (d / s + frac_bits)))


def approx_divide_logexp(a: int, b: int, s: int = 1, frac_bits: int = 0,
                         domain: int = 2**16, literal_floor: bool = False) -> int:
    """Approximate a / b as 2**((i - j)/s) with i, j the scaled floor logs.

    The result is fixed-point with ``frac_bits`` fractional bits (0 returns an
    integer). ``literal_floor`` selects the 2**floor((i-j)/s) table instead of
    the rounded one.
    """
    if s < 1:
        raise ValueError("scaling factor must be >= 1")
    for v in (a, b):
        if not 1 <= v < domain:
            raise ValueError(f"operand {v} outside table domain [1, {domain})")
    d = _log_index(a, s) - _log_index(b, s)
    return exp_table_value(d, s, frac_bits, literal_floor)


@lru_cache(maxsize=16)
def _log_lut(s: int, domain: int) -> np.ndarray:
    lut = np.zeros(domain, dtype=np.int64)
    for lo, hi, i in log_table_entries(s, domain):
        lut[lo:hi + 1] = i
    return lut


def approx_divide_logexp_array(a, b, s: int = 1, frac_bits: int = 0, domain: int = 2**16,
                               literal_floor: bool = False) -> np.ndarray:
    """Vectorised :func:`approx_divide_logexp` driven by the range-match log table."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.min(initial=1) < 1 or b.min(initial=1) < 1 or max(a.max(initial=1), b.max(initial=1)) >= domain:
        raise ValueError("operands outside table domain")
    lut = _log_lut(s, domain)
    d = lut[a] - lut[b]
    imax = int(lut[domain - 1])
    table = np.array([exp_table_value(x, s, frac_bits, literal_floor)
                      for x in range(-imax, imax + 1)], dtype=np.float64)
    return table[d + imax]


# --- engine ----------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    table: int
    index: int
    fresh: bool


COLLISION = None


@dataclass(frozen=True)
class Started:
    pass


@dataclass(frozen=True)
class Continued:
    pass


@dataclass(frozen=True)
class Closed:
    features: BurstFeatures
    reason: str
    pkt_count: int
    burst_uid: int


@dataclass(frozen=True)
class CollisionFallback:
    pass


@dataclass
class IngestResult:
    placement: Placement | None
    events: list
    burst_uid: int | None = None
    needs_clear: bool = False

    @property
    def closed(self) -> Closed | None:
        for e in self.events:
            if isinstance(e, Closed):
                return e
        return None


class _Table:
    def __init__(self, tag: int, monitor: AccessMonitor | None):
        self.id = RegisterArray(f"t{tag}.flow_id", 0, monitor)
        self.first = RegisterArray(f"t{tag}.first_ts", 0, monitor)
        self.last = RegisterArray(f"t{tag}.last_ts", 0, monitor)
        self.count = RegisterArray(f"t{tag}.pkt_count", 0, monitor)
        self.bl = RegisterArray(f"t{tag}.bl", BLAccum(), monitor)
        # simulator bookkeeping, not data-plane state
        self.burst_uid: dict[int, int] = {}


class BurstEngine:
    """Double-hash-table burst segmenter with register-level state."""

    def __init__(self, hash_cfg: BiHashConfig | None = None, cfg: BurstConfig | None = None,
                 arithmetic: str = "exact", logexp_s: int = 8,
                 monitor: AccessMonitor | None = None, auto_clear: bool = True):
        self.hash_cfg = hash_cfg or BiHashConfig()
        # when False the caller must run clear_slot() after a count close
        self.auto_clear = auto_clear
        self.cfg = cfg or BurstConfig()
        self.arithmetic = arithmetic
        self.logexp_s = logexp_s
        self.monitor = monitor
        self.tables = {1: _Table(1, monitor), 2: _Table(2, monitor)}
        self._next_uid = 0
        self._last_ts = -1

    def indices(self, t: FiveTuple) -> tuple[int, int]:
        h = self.hash_cfg
        return (bi_hash(t, h, "H1") & ((1 << h.a1) - 1),
                bi_hash(t, h, "H2") & ((1 << h.a2) - 1))

    def table_place(self, t: FiveTuple, fid: int) -> Placement | None:
        """Claim or find the flow's slot: table 1 first, then table 2."""
        s1, s2 = self.indices(t)

        def claim(v):
            return (fid if v == 0 else v), v

        stored = self.tables[1].id.execute(s1, claim)
        if stored == 0 or stored == fid:
            return Placement(1, s1, stored == 0)
        stored = self.tables[2].id.execute(s2, claim)
        if stored == 0 or stored == fid:
            return Placement(2, s2, stored == 0)
        return COLLISION

    def slot(self, table: int, index: int) -> BurstSlot:
        tb = self.tables[table]
        return BurstSlot(tb.id.peek(index), tb.first.peek(index), tb.last.peek(index),
                         tb.count.peek(index), tb.bl.peek(index))

    def _features(self, acc: BLAccum, first_reg: int, last_reg: int) -> BurstFeatures:
        dur = self.cfg.register_delta_ns(last_reg, first_reg)
        return finalize_burst_features(acc, 0, dur, self.arithmetic, self.logexp_s)

    def ingest_packet(self, p: PacketRecord) -> IngestResult:
        if p.ts_ns < self._last_ts:
            raise ValueError(f"packet at {p.ts_ns} ns arrives before {self._last_ts} ns")
        self._last_ts = p.ts_ns
        cfg = self.cfg
        pl = self.table_place(p.five_tuple, flow_id(p.five_tuple, self.hash_cfg))
        if pl is COLLISION:
            return IngestResult(None, [CollisionFallback()])
        tb = self.tables[pl.table]
        i = pl.index
        now = cfg.register_time(p.ts_ns)
        fresh = pl.fresh

        def upd_last(v):
            return now, (now if fresh else v)

        old_last = tb.last.execute(i, upd_last)
        idle = not fresh and check_timeouts(BurstSlot(last_ts=old_last), p.ts_ns, cfg)["idle"]
        flags = {}

        def upd_first(v):
            old = now if fresh else v
            active = not fresh and check_timeouts(
                BurstSlot(first_ts=old, last_ts=old_last), p.ts_ns, cfg)["active"]
            flags["active"] = active
            return (now if (fresh or idle or active) else v), old

        old_first = tb.first.execute(i, upd_first)
        timeout = idle or flags["active"]
        N = cfg.n_threshold

        def upd_count(v):
            if timeout:
                return 1, v
            n = v + 1
            return (0 if n == N else n), n

        count = tb.count.execute(i, upd_count)
        gap = cfg.register_delta_ns(now, old_last)

        def upd_bl(v):
            if timeout:
                return BLAccum.start(p), v
            acc = BLAccum.start(p) if fresh else v.add(p.ip_len, gap)
            if count < N:
                return acc, None
            return BLAccum(), acc

        stored = tb.bl.execute(i, upd_bl)

        events: list = []
        needs_clear = False
        if timeout:
            uid = tb.burst_uid[i]
            reason = "idle" if idle else "active"
            events.append(Closed(self._features(stored, old_first, old_last), reason, count, uid))
            events.append(Started())
            tb.burst_uid[i] = self._new_uid()
        elif fresh:
            events.append(Started())
            tb.burst_uid[i] = self._new_uid()
        else:
            events.append(Continued())
        uid = tb.burst_uid[i]
        if not timeout and count == N:
            events.append(Closed(self._features(stored, old_first, now), "count", count, uid))
            needs_clear = True
            del tb.burst_uid[i]
            if self.auto_clear:
                if self.monitor is not None:
                    self.monitor.begin_pass()
                self.clear_slot(pl.table, i)
        return IngestResult(pl, events, uid, needs_clear)

    def clear_slot(self, table: int, index: int) -> None:
        """Second pass of a loopback-mirrored packet: zero ID and timestamp registers."""
        tb = self.tables[table]
        for reg in (tb.id, tb.first, tb.last):
            reg.execute(index, lambda v: (0, None))

    def flush(self) -> list[tuple[Placement, Closed]]:
        """Close every open burst (reason ``idle``) and clear all slots."""
        out = []
        for tag in (1, 2):
            tb = self.tables[tag]
            for i in sorted(tb.burst_uid):
                acc = tb.bl.peek(i)
                if acc.n == 0:
                    continue
                feats = self._features(acc, tb.first.peek(i), tb.last.peek(i))
                out.append((Placement(tag, i, False),
                            Closed(feats, "idle", acc.n, tb.burst_uid[i])))
        self.tables = {1: _Table(1, self.monitor), 2: _Table(2, self.monitor)}
        return out

    def _new_uid(self) -> int:
        self._next_uid += 1
        return self._next_uid


# --- offline reference segmentation ---------------------------------------

@dataclass
class OfflineBurst:
    flow: FiveTuple
    index: int
    reason: str
    packets: list

    @property
    def accum(self) -> BLAccum:
        return BLAccum.from_packets(self.packets)

    def features(self, mode: str = "exact", s: int = 8) -> BurstFeatures:
        return finalize_burst_features(self.accum, self.packets[0].ts_ns,
                                       self.packets[-1].ts_ns, mode, s)


def segment_flows(packets: Iterable[PacketRecord], cfg: BurstConfig | None = None) -> list[OfflineBurst]:
    """Split packets into bursts per direction-independent flow, without hashing.

    Bursts close on idle gap, on duration, or when they reach the packet-count
    threshold; whatever is open at the end is closed with reason ``idle``.
    """
    cfg = cfg or BurstConfig()
    open_: dict[FiveTuple, list] = {}
    count: dict[FiveTuple, int] = {}
    out: list[OfflineBurst] = []

    def close(key, reason):
        out.append(OfflineBurst(key, count.get(key, 0), reason, open_.pop(key)))
        count[key] = count.get(key, 0) + 1

    for p in packets:
        key = p.five_tuple.canonical()
        cur = open_.get(key)
        if cur:
            if p.ts_ns - cur[-1].ts_ns > cfg.delta_idle_ns:
                close(key, "idle")
            elif cur[-1].ts_ns - cur[0].ts_ns > cfg.delta_active_ns:
                close(key, "active")
        open_.setdefault(key, []).append(p)
        if len(open_[key]) == cfg.n_threshold:
            close(key, "count")
    for key in list(open_):
        close(key, "idle")
    return out


def iter_burst_features(packets: Iterable[PacketRecord], schema: FeatureSchema,
                        cfg: BurstConfig | None = None, mode: str = "exact") -> Iterator[tuple[OfflineBurst, np.ndarray]]:
    for b in segment_flows(packets, cfg):
        yield b, b.features(mode).vector(schema)
