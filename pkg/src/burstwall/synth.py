"""Seed-deterministic synthetic data: feature matrices and packet traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .traffic import FeatureSchema, FiveTuple, PacketRecord

# --- feature-level data ----------------------------------------------------


@dataclass(frozen=True)
class FeatureSetConfig:
    n_features: int = 8
    bit_width: int = 8
    n_train: int = 5000
    n_val: int = 2000
    n_eval: int = 2000
    contamination: float = 0.2
    spread: float = 10.0       # domain width over sigma
    shift_sigma: float = 4.0   # anomaly offset, in sigmas
    n_shifted: int = 3         # features offset per anomaly

    def __post_init__(self):
        if not 0 <= self.contamination < 1:
            raise ValueError("contamination must lie in [0, 1)")
        if not 1 <= self.n_shifted <= self.n_features:
            raise ValueError("n_shifted must be in [1, n_features]")


@dataclass
class FeatureDataset:
    schema: FeatureSchema
    X_train: np.ndarray
    X_val: np.ndarray
    X_eval: np.ndarray       # benign only
    X_mixed: np.ndarray      # X_eval plus anomalies
    y_mixed: np.ndarray


def feature_schema(cfg: FeatureSetConfig = FeatureSetConfig()) -> FeatureSchema:
    return FeatureSchema.of(*[(f"f{j}", "BL", True, cfg.bit_width) for j in range(cfg.n_features)])


def _to_domain(z: np.ndarray, cfg: FeatureSetConfig) -> np.ndarray:
    hi = 2**cfg.bit_width - 1
    return np.clip(np.round(hi / 2 + z * hi / cfg.spread), 0, hi)


def benign_features(n: int, rng: np.random.Generator, cfg: FeatureSetConfig = FeatureSetConfig()) -> np.ndarray:
    """Independent Gaussians centred in the integer domain."""
    return _to_domain(rng.standard_normal((n, cfg.n_features)), cfg)


def anomalous_features(n: int, rng: np.random.Generator,
                       cfg: FeatureSetConfig = FeatureSetConfig()) -> np.ndarray:
    """Benign draws with ``n_shifted`` random features moved by +-shift_sigma."""
    z = rng.standard_normal((n, cfg.n_features))
    for row in z:
        cols = rng.choice(cfg.n_features, size=cfg.n_shifted, replace=False)
        row[cols] += rng.choice([-cfg.shift_sigma, cfg.shift_sigma], size=cfg.n_shifted)
    return _to_domain(z, cfg)


def make_feature_dataset(cfg: FeatureSetConfig = FeatureSetConfig(), seed: int = 0) -> FeatureDataset:
    rng = np.random.default_rng(seed)
    X_train = benign_features(cfg.n_train, rng, cfg)
    X_val = benign_features(cfg.n_val, rng, cfg)
    X_eval = benign_features(cfg.n_eval, rng, cfg)
    n_anom = round(cfg.n_eval * cfg.contamination / (1 - cfg.contamination))
    A = anomalous_features(n_anom, rng, cfg)
    X_mixed = np.vstack([X_eval, A])
    y = np.r_[np.zeros(len(X_eval), dtype=np.int64), np.ones(n_anom, dtype=np.int64)]
    return FeatureDataset(feature_schema(cfg), X_train, X_val, X_eval, X_mixed, y)


# --- packet traces ---------------------------------------------------------

MS = 1_000_000
S = 1_000_000_000

# burst-level features the default rule set works on, and the early-packet ones
DEFAULT_BL_SCHEMA = FeatureSchema.of(("mean_size", "BL", True, 11), ("max_size", "BL", True, 11),
                                     ("mean_ipd_us", "BL", True, 17))
DEFAULT_PL_SCHEMA = FeatureSchema.of(("dst_port", "PL", True, 16))


@dataclass(frozen=True)
class TraceConfig:
    n_benign_flows: int = 200
    n_attack_flows: int = 20
    bursts_per_flow: tuple[int, int] = (2, 8)
    burst_len: tuple[int, int] = (5, 15)
    benign_ipd_ms: tuple[float, float] = (0.5, 40.0)   # at the largest / smallest sizes
    benign_size: tuple[float, float] = (80.0, 1400.0)
    attack_ipd_ms: float = 0.8
    attack_size: float = 90.0
    burst_gap_s: tuple[float, float] = (1.5, 4.0)
    span_s: float = 60.0
    benign_ports: tuple[int, ...] = (53, 80, 443, 8080)
    attack_ports: tuple[int, ...] = (23, 2323, 7547)

    def __post_init__(self):
        lo, hi = self.burst_len
        if not 1 <= lo <= hi:
            raise ValueError("burst_len must be an increasing pair of positive ints")
        if self.burst_gap_s[0] <= 1.0:
            # keep bursts of one flow apart under the default idle timeout
            raise ValueError("burst gaps must exceed one second")


def _random_tuple(rng: np.random.Generator, ports, used: set) -> FiveTuple:
    while True:
        t = FiveTuple(int(rng.integers(0x0A000001, 0x0AFFFFFF)), int(rng.integers(0xC0A80001, 0xC0A8FFFF)),
                      int(rng.integers(1024, 65536)), int(rng.choice(ports)),
                      17 if rng.random() < 0.2 else 6)
        if t.canonical() not in used:
            used.add(t.canonical())
            return t


def _flow_packets(rng, t: FiveTuple, start_ns: int, n_bursts: int, lens: tuple[int, int],
                  ipd_ms: float, size_mean: float, size_sd: float, gaps, label: str,
                  bidirectional: bool) -> list[PacketRecord]:
    out = []
    ts = start_ns
    for _ in range(n_bursts):
        k = int(rng.integers(lens[0], lens[1] + 1))
        for j in range(k):
            if j:
                # exponential gaps, capped well below the idle timeout
                ts += int(min(rng.exponential(ipd_ms * MS), 0.5 * S)) + 1
            size = int(np.clip(round(rng.normal(size_mean, size_sd)), 40, 1500))
            tup = t.reversed() if bidirectional and rng.random() < 0.3 else t
            out.append(PacketRecord(ts, tup, size, label))
        ts += int(rng.uniform(*gaps) * S)
    return out


def _benign_point(cfg: TraceConfig, u: float) -> tuple[float, float]:
    """Mean packet size and inter-packet gap (ms) at position u of the benign line."""
    size = cfg.benign_size[0] + u * (cfg.benign_size[1] - cfg.benign_size[0])
    ipd = cfg.benign_ipd_ms[1] + u * (cfg.benign_ipd_ms[0] - cfg.benign_ipd_ms[1])
    return size, ipd


def make_trace(cfg: TraceConfig = TraceConfig(), seed: int = 0) -> list[PacketRecord]:
    """Benign flows trade packet size against rate (bulk transfers send large
    packets quickly, chatty flows small ones slowly); attack flows send small
    packets quickly."""
    rng = np.random.default_rng(seed)
    used: set = set()
    packets: list[PacketRecord] = []
    for _ in range(cfg.n_benign_flows):
        t = _random_tuple(rng, cfg.benign_ports, used)
        size, ipd = _benign_point(cfg, rng.random())
        packets += _flow_packets(rng, t, int(rng.uniform(0, cfg.span_s) * S),
                                 int(rng.integers(cfg.bursts_per_flow[0], cfg.bursts_per_flow[1] + 1)),
                                 cfg.burst_len, ipd, size, 0.05 * size,
                                 cfg.burst_gap_s, "benign", True)
    for _ in range(cfg.n_attack_flows):
        t = _random_tuple(rng, cfg.attack_ports, used)
        packets += _flow_packets(rng, t, int(rng.uniform(0, cfg.span_s) * S),
                                 int(rng.integers(cfg.bursts_per_flow[0], cfg.bursts_per_flow[1] + 1)),
                                 cfg.burst_len, cfg.attack_ipd_ms, cfg.attack_size, 0.05 * cfg.attack_size,
                                 cfg.burst_gap_s, "malicious", False)
    packets.sort(key=lambda p: (p.ts_ns, p.five_tuple))
    return packets


def uniform_burst_trace(n_flows: int = 50, bursts_per_flow: int = 4, burst_len: int = 15,
                        seed: int = 0, ipd_ms: float = 5.0, gap_s: float = 2.0) -> list[PacketRecord]:
    """Every flow sends bursts of exactly ``burst_len`` packets, separated by ``gap_s``."""
    rng = np.random.default_rng(seed)
    used: set = set()
    packets = []
    for _ in range(n_flows):
        t = _random_tuple(rng, (80, 443), used)
        ts = int(rng.uniform(0, 1) * S)
        for _ in range(bursts_per_flow):
            for j in range(burst_len):
                packets.append(PacketRecord(ts, t, int(rng.integers(100, 1400)), "benign"))
                ts += int(ipd_ms * MS)
            ts += int(gap_s * S)
    packets.sort(key=lambda p: (p.ts_ns, p.five_tuple))
    return packets


def attack_flow(t: FiveTuple, start_ns: int, n_bursts: int = 5, burst_len: int = 15,
                ipd_us: int = 300, size: int = 64, gap_s: float = 2.0) -> list[PacketRecord]:
    """A flow of identical small, fast bursts, each ``burst_len`` packets long."""
    out = []
    ts = start_ns
    for _ in range(n_bursts):
        for _ in range(burst_len):
            out.append(PacketRecord(ts, t, size, "malicious"))
            ts += ipd_us * 1000
        ts += int(gap_s * S)
    return out


def benign_flow(t: FiveTuple, start_ns: int, u: float = 0.5, n_bursts: int = 5,
                burst_len: int = 10, cfg: TraceConfig = TraceConfig(), seed: int = 0) -> list[PacketRecord]:
    """One benign flow drawn like those of :func:`make_trace`, at position u of the size/rate line."""
    if not 0 <= u <= 1:
        raise ValueError("u must lie in [0, 1]")
    size, ipd = _benign_point(cfg, u)
    return _flow_packets(np.random.default_rng(seed), t, start_ns, n_bursts, (burst_len, burst_len),
                         ipd, size, 0.05 * size, cfg.burst_gap_s, "benign", True)


def benign_burst_features(trace, schema: FeatureSchema = DEFAULT_BL_SCHEMA, cfg=None,
                          mode: str = "exact") -> np.ndarray:
    """Feature matrix of the benign bursts of a trace, by offline segmentation."""
    from .burst import iter_burst_features
    rows = [v for b, v in iter_burst_features([p for p in trace if not p.malicious], schema, cfg, mode)]
    return np.array(rows, dtype=float).reshape(-1, len(schema))


def packet_features(trace, schema: FeatureSchema = DEFAULT_PL_SCHEMA) -> np.ndarray:
    """Per-packet PL feature matrix."""
    from .burst import pl_vector
    return np.array([pl_vector(p, schema) for p in trace], dtype=float).reshape(-1, len(schema))
