"""Reusable training steps shared by the CLI, the scripts and the tests."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .autoencoder import Ensemble, train_ensemble
from .burst import BurstConfig, iter_burst_features, pl_vector
from .config import Config
from .distill import DistilledForest, embed_leaves
from .iforest import IForestModel, theta_from_contamination, train_iforest
from .pipeline import PipelineConfig
from .rulegen import CombinedRuleSet, WhitelistRuleSet, compile_rules, merge_rule_sets
from .traffic import Feature, FeatureSchema, PacketRecord

TEACHER_TAG = "burstwall.teacher/1"


class ArtifactMismatch(ValueError):
    pass


def parse_schema(text: str, kind: str = "BL") -> FeatureSchema:
    """``name:bits,name:bits`` -> integer feature schema."""
    feats = []
    for item in text.split(","):
        name, _, bits = item.strip().partition(":")
        feats.append(Feature(name, kind, True, int(bits) if bits else 16))
    return FeatureSchema(tuple(feats))


def burst_matrix(trace, schema: FeatureSchema, burst_cfg: BurstConfig | None = None,
                 benign_only: bool = True, mode: str = "exact") -> tuple[np.ndarray, np.ndarray]:
    """Offline burst features of a trace and their burst labels."""
    pkts = [p for p in trace if not (benign_only and p.malicious)]
    rows, labels = [], []
    for b, v in iter_burst_features(pkts, schema, burst_cfg, mode):
        rows.append(v)
        labels.append(int(any(p.malicious for p in b.packets)))
    return np.array(rows, dtype=float).reshape(-1, len(schema)), np.array(labels, dtype=np.int64)


def split(X: np.ndarray, frac: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(len(X))
    cut = int(round(frac * len(X)))
    return X[order[:cut]], X[order[cut:]]


def teacher_to_json(ens: Ensemble, schema: FeatureSchema) -> dict:
    return {"format": TEACHER_TAG, "schema": schema.to_json(), "schema_digest": schema.digest(),
            "ensemble": ens.to_json()}


def teacher_from_json(d: dict) -> tuple[Ensemble, FeatureSchema]:
    if d.get("format") != TEACHER_TAG:
        raise ArtifactMismatch(f"not a teacher file (format {d.get('format')!r})")
    return Ensemble.from_json(d["ensemble"]), FeatureSchema.from_json(d["schema"])


def train_teacher(X: np.ndarray, cfg: Config, seed: int) -> Ensemble:
    a = cfg.autoencoder
    X_train, X_val = split(X, 0.8, seed)
    return train_ensemble(X_train, X_val, a.r, a.target_fpr, a.epochs, a.lr, seed)


def train_forest(X: np.ndarray, schema: FeatureSchema, cfg: Config, seed: int) -> IForestModel:
    return train_iforest(X, cfg.iforest.t, min(cfg.iforest.psi, len(X)), seed, schema)


def distill(forest: IForestModel, teacher: Ensemble, teacher_schema: FeatureSchema,
            X: np.ndarray, cfg: Config, seed: int) -> DistilledForest:
    if teacher_schema.digest() != forest.schema.digest():
        raise ArtifactMismatch(f"teacher schema {teacher_schema.digest()} does not match "
                               f"forest schema {forest.schema.digest()}")
    d = cfg.distill
    return embed_leaves(forest, teacher, X, d.k, seed, d.combiner, cfg.iforest.theta_if, d.leaf_bounds)


def packet_matrix(trace, schema: FeatureSchema, benign_only: bool = True) -> np.ndarray:
    rows = [pl_vector(p, schema) for p in trace if not (benign_only and p.malicious)]
    return np.array(rows, dtype=float).reshape(-1, len(schema))


def train_pl_rules(trace, schema: FeatureSchema, cfg: Config, seed: int) -> WhitelistRuleSet:
    """Plain forest on per-packet features, thresholded to flag a small share of benign packets."""
    r = cfg.rules
    X = packet_matrix(trace, schema)
    forest = train_iforest(X, r.pl_t, min(r.pl_psi, len(X)), seed, schema)
    theta = theta_from_contamination(forest.score(X), r.pl_contamination)
    rules, _, _ = compile_rules(forest, r.cube_cap, theta_if=theta, tag="pl")
    return rules


def build_rules(df: DistilledForest, trace, pl_schema: FeatureSchema, cfg: Config,
                seed: int) -> CombinedRuleSet:
    bl, _, _ = compile_rules(df, cfg.rules.cube_cap)
    return merge_rule_sets(bl, train_pl_rules(trace, pl_schema, cfg, seed))


def pipeline_config(rules: CombinedRuleSet, cfg: Config, strategy: str | None = None) -> PipelineConfig:
    p = cfg.pipeline
    return PipelineConfig(rules, cfg.hash, cfg.burst, p.blacklist_capacity, strategy or p.strategy,
                          p.arithmetic, p.logexp_s, p.digest_normal, p.digest_delay_ns)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
