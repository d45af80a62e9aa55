"""Packets, 5-tuples, feature schemas and trace ingestion."""

from __future__ import annotations

import csv
import hashlib
import heapq
import ipaddress
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

LABELS = ("benign", "malicious")
TRACE_FIELDS = ("ts_ns", "src_ip", "dst_ip", "src_port", "dst_port", "protocol", "ip_len", "label")
REORDER_WINDOW_NS = 1_000_000_000


class TraceError(ValueError):
    """Raised when a trace cannot be read in timestamp order."""


def ip_to_int(value: str | int) -> int:
    if isinstance(value, int):
        if not 0 <= value < 2**32:
            raise ValueError(f"IPv4 address out of range: {value}")
        return value
    return int(ipaddress.IPv4Address(value))


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


@dataclass(frozen=True, order=True)
class FiveTuple:
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int

    def __post_init__(self):
        for name, width in (("src_ip", 32), ("dst_ip", 32), ("src_port", 16),
                            ("dst_port", 16), ("protocol", 8)):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= v < 2**width:
                raise ValueError(f"{name}={v!r} is not a {width}-bit unsigned integer")

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.protocol)

    def canonical(self) -> "FiveTuple":
        """Direction-independent key: the smaller of the tuple and its reverse."""
        r = self.reversed()
        return min(self, r)

    def to_json(self) -> dict:
        return {"src_ip": int_to_ip(self.src_ip), "dst_ip": int_to_ip(self.dst_ip),
                "src_port": self.src_port, "dst_port": self.dst_port, "protocol": self.protocol}

    @classmethod
    def from_json(cls, d: dict) -> "FiveTuple":
        return cls(ip_to_int(d["src_ip"]), ip_to_int(d["dst_ip"]), int(d["src_port"]),
                   int(d["dst_port"]), int(d["protocol"]))


def reverse_five_tuple(t: FiveTuple) -> FiveTuple:
    return t.reversed()


@dataclass(frozen=True)
class PacketRecord:
    ts_ns: int
    five_tuple: FiveTuple
    ip_len: int
    ground_truth: str | None = None

    def __post_init__(self):
        if not 0 <= self.ts_ns < 2**64:
            raise ValueError(f"ts_ns out of range: {self.ts_ns}")
        if not 20 <= self.ip_len < 2**16:
            raise ValueError(f"ip_len must be in [20, 65535], got {self.ip_len}")
        if self.ground_truth is not None and self.ground_truth not in LABELS:
            raise ValueError(f"unknown label {self.ground_truth!r}")

    @property
    def malicious(self) -> bool:
        return self.ground_truth == "malicious"

    def to_json(self) -> dict:
        d = {"ts_ns": self.ts_ns, **self.five_tuple.to_json(), "ip_len": self.ip_len}
        if self.ground_truth is not None:
            d["label"] = self.ground_truth
        return d


# --- feature schemas -------------------------------------------------------

@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = "BL"
    integer: bool = True
    bit_width: int = 16

    def __post_init__(self):
        if self.kind not in ("PL", "BL"):
            raise ValueError(f"feature kind must be PL or BL, got {self.kind!r}")
        if not 1 <= self.bit_width <= 64:
            raise ValueError(f"bit_width must be in [1, 64], got {self.bit_width}")

    @property
    def max_value(self) -> int:
        return 2**self.bit_width - 1


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in {names}")
        if not names:
            raise ValueError("schema must have at least one feature")

    @classmethod
    def of(cls, *specs) -> "FeatureSchema":
        """Build from Feature objects or (name, kind, integer, bit_width) tuples."""
        return cls(tuple(s if isinstance(s, Feature) else Feature(*s) for s in specs))

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def all_integer(self) -> bool:
        return all(f.integer for f in self.features)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.zeros(len(self), dtype=float)
        hi = np.array([float(f.max_value) for f in self.features])
        return lo, hi

    def to_json(self) -> list[dict]:
        return [{"name": f.name, "kind": f.kind, "integer": f.integer, "bit_width": f.bit_width}
                for f in self.features]

    @classmethod
    def from_json(cls, items: Sequence[dict]) -> "FeatureSchema":
        return cls(tuple(Feature(d["name"], d["kind"], bool(d["integer"]), int(d["bit_width"]))
                         for d in items))

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self, X) -> np.ndarray:
        """Check a matrix (or single vector) of feature values against the schema."""
        X = np.asarray(X, dtype=float)
        rows = X.reshape(1, -1) if X.ndim == 1 else X
        if rows.shape[1] != len(self):
            raise ValueError(f"expected {len(self)} features, got {rows.shape[1]}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature values must be finite")
        for j, f in enumerate(self.features):
            col = rows[:, j]
            if f.integer and np.any(col != np.floor(col)):
                raise ValueError(f"feature {f.name!r} is integer but holds fractional values")
            if np.any(col < 0) or np.any(col > f.max_value):
                raise ValueError(f"feature {f.name!r} exceeds its {f.bit_width}-bit range")
        return X

    def saturate(self, X) -> np.ndarray:
        """Clip to each feature's unsigned range and floor integer features."""
        X = np.array(X, dtype=float)
        lo, hi = self.bounds()
        X = np.clip(X, lo, hi)
        ints = np.array([f.integer for f in self.features])
        if X.ndim == 1:
            X[ints] = np.floor(X[ints])
        else:
            X[:, ints] = np.floor(X[:, ints])
        return X


# --- trace IO --------------------------------------------------------------

@dataclass
class TraceDiagnostic:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


def _record_from_mapping(d: dict) -> PacketRecord:
    missing = [k for k in TRACE_FIELDS[:-1] if d.get(k) in (None, "")]
    if missing:
        raise ValueError(f"missing required field(s): {', '.join(missing)}")
    label = d.get("label") or None
    t = FiveTuple(ip_to_int(d["src_ip"]), ip_to_int(d["dst_ip"]), int(d["src_port"]),
                  int(d["dst_port"]), int(d["protocol"]))
    return PacketRecord(int(d["ts_ns"]), t, int(d["ip_len"]), label)


def _raw_rows(path: Path, fmt: str) -> Iterator[tuple[int, dict | None, str | None]]:
    with open(path, newline="") as fh:
        if fmt == "jsonl":
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line), None
                except json.JSONDecodeError as e:
                    yield lineno, None, f"invalid JSON: {e.msg}"
        elif fmt == "csv":
            reader = csv.reader(fh)
            for row in reader:
                lineno = reader.line_num
                if not row or (lineno == 1 and row[0] == "ts_ns"):
                    continue
                yield lineno, dict(zip(TRACE_FIELDS, row)), None
        else:
            raise ValueError(f"unknown trace format {fmt!r}")


def parse_trace(path, format: str | None = None,
                diagnostics: list[TraceDiagnostic] | None = None,
                reorder_window_ns: int = REORDER_WINDOW_NS) -> Iterator[PacketRecord]:
    """Yield packets from a JSONL or CSV trace in timestamp order.

    Malformed lines are skipped and reported in ``diagnostics``. Records that
    arrive out of order by less than ``reorder_window_ns`` are re-sorted with a
    warning; anything older than the window raises :class:`TraceError`.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if diagnostics is None:
        diagnostics = []
    heap: list[tuple[int, int, PacketRecord]] = []
    max_seen = -1
    last_out = -1
    seq = 0
    for lineno, row, err in _raw_rows(path, format):
        if err is None:
            try:
                rec = _record_from_mapping(row)
            except (ValueError, KeyError, TypeError) as e:
                err = str(e)
        if err is not None:
            diagnostics.append(TraceDiagnostic(lineno, err))
            log.warning("%s: line %d: %s", path, lineno, err)
            continue
        if rec.ts_ns < max_seen:
            if rec.ts_ns < last_out or max_seen - rec.ts_ns > reorder_window_ns:
                raise TraceError(f"{path}: line {lineno}: timestamp {rec.ts_ns} is more than "
                                 f"{reorder_window_ns} ns behind {max_seen}")
            diagnostics.append(TraceDiagnostic(lineno, "out-of-order timestamp, reordered"))
            log.warning("%s: line %d: out-of-order timestamp, reordered", path, lineno)
        max_seen = max(max_seen, rec.ts_ns)
        heapq.heappush(heap, (rec.ts_ns, seq, rec))
        seq += 1
        while heap and heap[0][0] < max_seen - reorder_window_ns:
            last_out = heap[0][0]
            yield heapq.heappop(heap)[2]
    while heap:
        yield heapq.heappop(heap)[2]


def write_trace(records: Iterable[PacketRecord], path, format: str | None = None) -> int:
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    n = 0
    with open(path, "w", newline="") as fh:
        if format == "jsonl":
            for r in records:
                fh.write(json.dumps(r.to_json()) + "\n")
                n += 1
        else:
            w = csv.writer(fh)
            w.writerow(TRACE_FIELDS)
            for r in records:
                d = r.to_json()
                w.writerow([d.get(k, "") for k in TRACE_FIELDS])
                n += 1
    return n
