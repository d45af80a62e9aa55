"""Run configuration: one INI section per module, flat keys.

Missing keys fall back to the defaults below; unknown sections or keys are
rejected so typos surface early.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .burst import BiHashConfig, BurstConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AutoencoderSection:
    r: int = 1
    epochs: int = 100
    lr: float = 1e-2
    target_fpr: float = 0.01
    batch_size: int = 64


@dataclass(frozen=True)
class IForestSection:
    t: int = 10
    psi: int = 128
    theta_if: float = 0.5


@dataclass(frozen=True)
class DistillSection:
    k: int = 50
    combiner: str = "product"
    leaf_bounds: str = "train_range"


@dataclass(frozen=True)
class RulesSection:
    cube_cap: int = 10**7
    pl_t: int = 10
    pl_psi: int = 64
    pl_contamination: float = 0.01


@dataclass(frozen=True)
class PipelineSection:
    strategy: str = "atomic"
    arithmetic: str = "exact"
    logexp_s: int = 8
    blacklist_capacity: int = 1024
    digest_normal: bool = True
    digest_delay_ns: int = 0


@dataclass(frozen=True)
class ControllerSection:
    tau: float = 0.5
    policy: str = "FIFO"
    batch: int = 10_000
    window: int = 50_000
    online: bool = False


@dataclass(frozen=True)
class ProfilerSection:
    alpha: float = 0.5
    rule_capacity: int = 10_000
    register_capacity: int = 2**27
    t: str = "5,10"
    psi: str = "64,128"
    k: str = "50"


@dataclass(frozen=True)
class FeaturesSection:
    bl: str = "mean_size:11,max_size:11,mean_ipd_us:17"
    pl: str = "dst_port:16"


@dataclass(frozen=True)
class SynthSection:
    n_benign_flows: int = 200
    n_attack_flows: int = 20


@dataclass(frozen=True)
class Config:
    hash: BiHashConfig = field(default_factory=BiHashConfig)
    burst: BurstConfig = field(default_factory=BurstConfig)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    iforest: IForestSection = field(default_factory=IForestSection)
    distill: DistillSection = field(default_factory=DistillSection)
    rules: RulesSection = field(default_factory=RulesSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    profiler: ProfilerSection = field(default_factory=ProfilerSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    synth: SynthSection = field(default_factory=SynthSection)
    seed: int = 0


def _convert(raw: str, typ, where: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw, 0)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ.__name__}") from exc


def _section(obj, items: dict, name: str):
    types = {f.name: f.type for f in fields(obj)}
    updates = {}
    for key, raw in items.items():
        if key not in types:
            raise ConfigError(f"unknown key [{name}] {key}")
        typ = {"int": int, "float": float, "bool": bool, "str": str}.get(str(types[key]), str)
        updates[key] = _convert(raw, typ, f"[{name}] {key}")
    try:
        return replace(obj, **updates)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Read an INI file (or none) and apply ``section.key`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, str(value))
    cfg = Config()
    updates = {}
    for sec in cp.sections():
        if sec == "run":
            for key, raw in cp.items(sec):
                if key != "seed":
                    raise ConfigError(f"unknown key [run] {key}")
                updates["seed"] = _convert(raw, int, "[run] seed")
            continue
        if not hasattr(cfg, sec) or sec == "seed":
            raise ConfigError(f"unknown section [{sec}]")
        updates[sec] = _section(getattr(cfg, sec), dict(cp.items(sec)), sec)
    return replace(cfg, **updates)


def dump_config(cfg: Config) -> str:
    lines = ["[run]", f"seed = {cfg.seed}", ""]
    for f in fields(cfg):
        if f.name == "seed":
            continue
        sec = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        for g in fields(sec):
            lines.append(f"{g.name} = {getattr(sec, g.name)}")
        lines.append("")
    return "\n".join(lines)


def int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]
