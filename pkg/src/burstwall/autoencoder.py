"""Fully-connected autoencoders trained on benign feature vectors."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FORMAT_TAG = "burstwall.autoencoder/1"


class TrainingError(RuntimeError):
    pass


def default_arch(m: int) -> list[int]:
    return [m, math.ceil(m / 2), math.ceil(m / 4), math.ceil(m / 2), m]


@dataclass
class AutoencoderModel:
    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_min: np.ndarray
    x_max: np.ndarray
    threshold: float = float("nan")
    activation: str = "tanh"

    @property
    def m(self) -> int:
        return self.sizes[0]

    def normalize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        span = self.x_max - self.x_min
        safe = np.where(span > 0, span, 1.0)
        Z = np.where(span > 0, (X - self.x_min) / safe, 0.0)
        return np.clip(Z, 0.0, 1.0)

    def forward_normalized(self, Z: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return the reconstruction and the list of layer activations."""
        acts = [Z]
        a = Z
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W + b
            if k < last:
                a = np.tanh(a)
            acts.append(a)
        return a, acts

    def reconstruct(self, X) -> np.ndarray:
        return self.forward_normalized(self.normalize(X))[0]

    def reconstruction_error(self, X) -> np.ndarray:
        Z = self.normalize(X)
        R = self.forward_normalized(Z)[0]
        return np.sqrt(np.mean((R - Z) ** 2, axis=1))

    def loss_and_grads(self, Z: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean squared reconstruction loss and its gradients."""
        R, acts = self.forward_normalized(Z)
        n = len(Z)
        diff = R - Z
        loss = float(np.mean(diff**2))
        delta = 2.0 * diff / (n * self.m)
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            gW[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k].T) * (1.0 - acts[k] ** 2)
        return loss, gW, gb

    def to_json(self) -> dict:
        return {"format": FORMAT_TAG, "sizes": self.sizes, "activation": self.activation,
                "weights": [W.tolist() for W in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "x_min": self.x_min.tolist(), "x_max": self.x_max.tolist(),
                "threshold": self.threshold}

    @classmethod
    def from_json(cls, d: dict) -> "AutoencoderModel":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"not an autoencoder model file (format {d.get('format')!r})")
        return cls(list(d["sizes"]), [np.array(W, dtype=float) for W in d["weights"]],
                   [np.array(b, dtype=float) for b in d["biases"]],
                   np.array(d["x_min"], dtype=float), np.array(d["x_max"], dtype=float),
                   float(d["threshold"]), d.get("activation", "tanh"))


def init_autoencoder(X, arch: list[int] | None = None, seed: int = 0) -> AutoencoderModel:
    X = np.asarray(X, dtype=float)
    m = X.shape[1]
    sizes = list(arch) if arch else default_arch(m)
    if sizes[0] != m or sizes[-1] != m:
        raise ValueError(f"architecture {sizes} does not map {m} features to {m}")
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for a, b in zip(sizes, sizes[1:]):
        lim = math.sqrt(6.0 / (a + b))
        Ws.append(rng.uniform(-lim, lim, size=(a, b)))
        bs.append(np.zeros(b))
    x_min, x_max = X.min(axis=0), X.max(axis=0)
    flat = np.flatnonzero(x_max == x_min)
    if flat.size:
        log.warning("features %s have zero variance; mapped to constant 0", flat.tolist())
    return AutoencoderModel(sizes, Ws, bs, x_min, x_max)


def train_autoencoder(X, arch: list[int] | None = None, epochs: int = 100, lr: float = 1e-2,
                      seed: int = 0, batch_size: int = 64) -> AutoencoderModel:
    """Fit by mini-batch Adam on min-max normalised inputs."""
    X = np.asarray(X, dtype=float)
    if len(X) < 10:
        raise ValueError("need at least 10 training samples")
    model = init_autoencoder(X, arch, seed)
    Z = model.normalize(X)
    rng = np.random.default_rng(seed + 1)
    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    first_loss = model.loss_and_grads(Z)[0]
    for _ in range(epochs):
        order = rng.permutation(len(Z))
        for start in range(0, len(Z), batch_size):
            batch = Z[order[start:start + batch_size]]
            loss, gW, gb = model.loss_and_grads(batch)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}")
            step += 1
            for k, (p, g) in enumerate(zip(params, gW + gb)):
                m1[k] = beta1 * m1[k] + (1 - beta1) * g
                m2[k] = beta2 * m2[k] + (1 - beta2) * g * g
                mh = m1[k] / (1 - beta1**step)
                vh = m2[k] / (1 - beta2**step)
                p -= lr * mh / (np.sqrt(vh) + eps)
    final = model.loss_and_grads(Z)[0]
    log.info("autoencoder %s: loss %.3g -> %.3g", model.sizes, first_loss, final)
    return model


def reconstruction_error(model: AutoencoderModel, x):
    re = model.reconstruction_error(x)
    return float(re[0]) if np.ndim(x) == 1 else re


def rmse(x, x_rec) -> np.ndarray:
    d = np.atleast_2d(np.asarray(x_rec, dtype=float) - np.asarray(x, dtype=float))
    return np.sqrt(np.mean(d**2, axis=1))


def calibrate_threshold(model: AutoencoderModel, X_val, target_fpr: float) -> float:
    """Set T to the (1 - target_fpr) empirical quantile of benign errors."""
    if not 0 < target_fpr < 1:
        raise ValueError("target_fpr must lie in (0, 1)")
    re = np.sort(model.reconstruction_error(X_val))
    k = math.ceil((1 - target_fpr) * len(re)) - 1
    model.threshold = max(float(re[max(k, 0)]), 1e-12)
    return model.threshold


@dataclass
class Ensemble:
    members: list[AutoencoderModel]
    weights: np.ndarray = None

    def __post_init__(self):
        r = len(self.members)
        if r == 0:
            raise ValueError("ensemble needs at least one member")
        if self.weights is None:
            self.weights = np.full(r, 1.0 / r)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != r or np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("weights must be r values in [0, 1]")
        if not math.isclose(self.weights.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("weights must sum to 1")

    @property
    def r(self) -> int:
        return len(self.members)

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([mb.threshold for mb in self.members])

    def errors(self, X) -> np.ndarray:
        """(n, r) reconstruction errors."""
        return np.stack([mb.reconstruction_error(X) for mb in self.members], axis=1)

    def indicators(self, X) -> np.ndarray:
        return (self.errors(X) > self.thresholds).astype(np.int64)

    def label_from_errors(self, E: np.ndarray) -> np.ndarray:
        return vote_label(E > self.thresholds, self.weights)

    def to_json(self) -> dict:
        return {"format": "burstwall.ensemble/1", "weights": self.weights.tolist(),
                "members": [mb.to_json() for mb in self.members]}

    @classmethod
    def from_json(cls, d: dict) -> "Ensemble":
        if d.get("format") != "burstwall.ensemble/1":
            raise ValueError("not an ensemble file")
        return cls([AutoencoderModel.from_json(m) for m in d["members"]], d["weights"])

    def model_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def vote_label(indicators, weights) -> np.ndarray:
    """1 where the weighted indicator sum strictly exceeds 0.5."""
    return (np.asarray(indicators, dtype=float) @ np.asarray(weights, dtype=float) > 0.5).astype(np.int64)


def ensemble_label(ens: Ensemble, x):
    """Return (labels, per-member indicators) for a vector or matrix."""
    ind = ens.indicators(x)
    lab = vote_label(ind, ens.weights)
    if np.ndim(x) == 1:
        return int(lab[0]), ind[0]
    return lab, ind


def train_ensemble(X, X_val, r: int = 1, target_fpr: float = 0.01, epochs: int = 100,
                   lr: float = 1e-2, seed: int = 0, arch: list[int] | None = None,
                   weights=None) -> Ensemble:
    members = []
    for u in range(r):
        mb = train_autoencoder(X, arch, epochs, lr, seed + 1000 * u)
        calibrate_threshold(mb, X_val, target_fpr)
        members.append(mb)
    return Ensemble(members, weights)
