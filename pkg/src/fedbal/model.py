"""Per-pixel linear softmax classifier, SGD, and local training.

Parameters live in one flat vector: the ``F x C`` weight matrix in
row-major order followed by ``C`` biases.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from fedbal.errors import InvalidArgumentError, NumericError
from fedbal.losses import TverskySpec, cross_entropy_and_grad, tversky_loss_and_grad
from fedbal.synthdata import ImageSample, WorkerShard
from fedbal.seeding import rng_for

LOSS_KINDS = ("cross_entropy", "tversky", "composite")


@dataclass(eq=False)
class ModelParams:
    weights: np.ndarray
    feature_dim: int
    n_classes: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = self.feature_dim * self.n_classes + self.n_classes
        if self.weights.shape != (expected,):
            raise InvalidArgumentError(
                f"expected {expected} weights for F={self.feature_dim}, C={self.n_classes}, got {self.weights.shape}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise NumericError("model parameters contain non-finite entries")

    @property
    def matrix(self) -> np.ndarray:
        k = self.feature_dim * self.n_classes
        return self.weights[:k].reshape(self.feature_dim, self.n_classes)

    @property
    def bias(self) -> np.ndarray:
        return self.weights[self.feature_dim * self.n_classes :]

    def copy(self) -> "ModelParams":
        return ModelParams(self.weights.copy(), self.feature_dim, self.n_classes)

    def with_weights(self, weights: np.ndarray) -> "ModelParams":
        return ModelParams(weights, self.feature_dim, self.n_classes)

    def to_json(self) -> str:
        # json emits floats via repr, the shortest round-trip decimal.
        return json.dumps(
            {"feature_dim": self.feature_dim, "n_classes": self.n_classes, "weights": self.weights.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        doc = json.loads(text)
        return cls(np.asarray(doc["weights"], dtype=np.float64), int(doc["feature_dim"]), int(doc["n_classes"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class LossSpec:
    kind: str = "tversky"
    tversky: TverskySpec = field(default_factory=TverskySpec)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidArgumentError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    learning_rate: float = 2.0
    loss: LossSpec = field(default_factory=LossSpec)
    prox_mu: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise InvalidArgumentError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if not (self.prox_mu >= 0 and math.isfinite(self.prox_mu)):
            raise InvalidArgumentError(f"prox_mu must be finite and >= 0, got {self.prox_mu}")


def init_params(seed: int, feature_dim: int, n_classes: int) -> ModelParams:
    """Uniform weights in ``[-1/sqrt(F), 1/sqrt(F)]``, deterministic per seed."""
    if feature_dim < 1:
        raise InvalidArgumentError(f"feature_dim must be >= 1, got {feature_dim}")
    if n_classes < 2:
        raise InvalidArgumentError(f"n_classes must be >= 2, got {n_classes}")
    limit = 1.0 / math.sqrt(feature_dim)
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-limit, limit, size=feature_dim * n_classes + n_classes)
    return ModelParams(weights, feature_dim, n_classes)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_features(params: ModelParams, features: np.ndarray) -> None:
    if features.shape[-1] != params.feature_dim:
        raise InvalidArgumentError(
            f"sample has {features.shape[-1]} feature channels, model expects {params.feature_dim}"
        )


def forward(params: ModelParams, sample: ImageSample) -> np.ndarray:
    """Per-pixel class probabilities, shape ``(H, W, C)``."""
    _check_features(params, sample.features)
    return _softmax(sample.features @ params.matrix + params.bias)


def predict(params: ModelParams, sample: ImageSample) -> np.ndarray:
    """Hard labels; ties go to the lowest class index."""
    _check_features(params, sample.features)
    return np.argmax(sample.features @ params.matrix + params.bias, axis=-1)


def _stack(batch: Sequence[ImageSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([s.features.reshape(-1, s.features.shape[-1]) for s in batch])
    y = np.concatenate([s.labels.reshape(-1) for s in batch])
    return x, y


def data_loss(probs: np.ndarray, labels: np.ndarray, loss: LossSpec) -> tuple[float, np.ndarray]:
    """Loss value and gradient w.r.t. ``probs`` for the configured loss."""
    if loss.kind == "cross_entropy":
        return cross_entropy_and_grad(probs, labels)
    if loss.kind == "tversky":
        return tversky_loss_and_grad(probs, labels, loss.tversky)
    ce, ce_grad = cross_entropy_and_grad(probs, labels)
    tv, tv_grad = tversky_loss_and_grad(probs, labels, loss.tversky)
    return ce + tv, ce_grad + tv_grad


def loss_and_grad(
    params: ModelParams,
    batch: Sequence[ImageSample],
    cfg: TrainConfig,
    anchor: ModelParams | None = None,
) -> tuple[float, np.ndarray]:
    """Batch loss (pixels pooled across images) and its gradient.

    With ``cfg.prox_mu > 0`` the proximal term ``mu/2 * ||w - anchor||^2``
    is added; ``anchor`` must then be given.
    """
    if not batch:
        raise InvalidArgumentError("batch is empty")
    if cfg.prox_mu > 0 and anchor is None:
        raise InvalidArgumentError("prox_mu > 0 requires an anchor")
    x, y = _stack(batch)
    _check_features(params, x)
    probs = _softmax(x @ params.matrix + params.bias)
    loss, d_probs = data_loss(probs, y, cfg.loss)

    # Softmax backward: dz = p * (g - <g, p>).
    d_logits = probs * (d_probs - (d_probs * probs).sum(axis=1, keepdims=True))
    grad = np.concatenate([(x.T @ d_logits).ravel(), d_logits.sum(axis=0)])

    if cfg.prox_mu > 0:
        delta = params.weights - anchor.weights
        loss += 0.5 * cfg.prox_mu * float(delta @ delta)
        grad = grad + cfg.prox_mu * delta

    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericError(
            f"non-finite loss/gradient (loss={loss}, max|w|={np.abs(params.weights).max():.3g}, "
            f"loss kind={cfg.loss.kind})"
        )
    return loss, grad


def sgd_step(params: ModelParams, grad: np.ndarray, learning_rate: float) -> ModelParams:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.weights.shape:
        raise InvalidArgumentError(f"gradient shape {grad.shape} != weights shape {params.weights.shape}")
    return params.with_weights(params.weights - learning_rate * grad)


def client_update(global_params: ModelParams, shard: WorkerShard, cfg: TrainConfig, seed: int) -> ModelParams:
    """Local mini-batch SGD starting from ``global_params``.

    Batches are whole images, reshuffled every epoch. The incoming global
    parameters also serve as the proximal anchor.
    """
    if not shard.samples:
        raise InvalidArgumentError(f"worker {shard.worker_id} has an empty shard")
    anchor = global_params if cfg.prox_mu > 0 else None
    local = global_params.copy()
    n = len(shard.samples)
    for epoch in range(cfg.epochs):
        order = rng_for(seed, "epoch", epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = [shard.samples[int(i)] for i in order[start : start + cfg.batch_size]]
            _, grad = loss_and_grad(local, batch, cfg, anchor)
            local = sgd_step(local, grad, cfg.learning_rate)
    return local


def with_prox(cfg: TrainConfig, mu: float) -> TrainConfig:
    return replace(cfg, prox_mu=mu)
