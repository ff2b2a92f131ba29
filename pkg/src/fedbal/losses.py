"""Tversky and cross-entropy losses for soft per-pixel predictions.

Both losses come with their gradient with respect to the probability map,
which :mod:`fedbal.model` chains through the softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedbal.errors import InvalidArgumentError

DEFAULT_ALPHA = 0.7
DEFAULT_BETA = 0.3
DEFAULT_EPSILON = 1e-6
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TverskySpec:
    """Penalties for false negatives (``alpha``) and false positives (``beta``)."""

    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidArgumentError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be > 0, got {self.epsilon}")


def tversky_index(tp: float, fn: float, fp: float, spec: TverskySpec = TverskySpec()) -> float:
    """``(tp + eps) / (tp + alpha*fn + beta*fp + eps)``."""
    if tp < 0 or fn < 0 or fp < 0:
        raise InvalidArgumentError(f"counts must be nonnegative, got tp={tp}, fn={fn}, fp={fp}")
    return (tp + spec.epsilon) / (tp + spec.alpha * fn + spec.beta * fp + spec.epsilon)


def _flatten(probs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape[:-1] != labels.shape:
        raise InvalidArgumentError(f"probs shape {probs.shape} does not match labels shape {labels.shape}")
    n_classes = probs.shape[-1]
    flat_labels = labels.reshape(-1)
    if flat_labels.size and (flat_labels.min() < 0 or flat_labels.max() >= n_classes):
        raise InvalidArgumentError(f"labels must lie in [0, {n_classes})")
    return probs.reshape(-1, n_classes), flat_labels


def tversky_loss_and_grad(
    probs: np.ndarray, labels: np.ndarray, spec: TverskySpec = TverskySpec()
) -> tuple[float, np.ndarray]:
    """Multi-class Tversky loss and its gradient w.r.t. ``probs``.

    Soft counts per class c are pooled over all pixels::

        TP_c = sum p_c [y = c]
        FN_c = sum (1 - p_c) [y = c]
        FP_c = sum p_c [y != c]

    The loss is ``1 - mean_c T_c`` over the classes present in ``labels``.
    """
    p, y = _flatten(probs, labels)
    n_classes = p.shape[1]
    onehot = np.eye(n_classes)[y]
    tp = (p * onehot).sum(axis=0)
    support = onehot.sum(axis=0)
    fn = support - tp
    fp = p.sum(axis=0) - tp
    present = support > 0
    n_present = int(present.sum())
    if n_present == 0:
        raise InvalidArgumentError("no pixels to score")

    num = tp + spec.epsilon
    den = tp + spec.alpha * fn + spec.beta * fp + spec.epsilon
    index = num / den
    loss = 1.0 - float(index[present].mean())

    # dT_c/dp_ic: on-class pixels move TP up and FN down, off-class pixels move FP up.
    d_on = (den - num * (1.0 - spec.alpha)) / den**2
    d_off = -num * spec.beta / den**2
    weight = np.where(present, -1.0 / n_present, 0.0)
    grad = np.where(onehot > 0, d_on, d_off) * weight
    return loss, grad.reshape(np.shape(probs))


def tversky_loss_multiclass(probs: np.ndarray, labels: np.ndarray, spec: TverskySpec = TverskySpec()) -> float:
    return tversky_loss_and_grad(probs, labels, spec)[0]


def cross_entropy_and_grad(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``-log max(p_true, 1e-12)`` and its gradient w.r.t. ``probs``."""
    p, y = _flatten(probs, labels)
    if y.size == 0:
        raise InvalidArgumentError("no pixels to score")
    rows = np.arange(y.size)
    p_true = p[rows, y]
    clamped = np.maximum(p_true, PROB_FLOOR)
    loss = float(-np.log(clamped).mean())
    grad = np.zeros_like(p)
    grad[rows, y] = np.where(p_true > PROB_FLOOR, -1.0 / (clamped * y.size), 0.0)
    return loss, grad.reshape(np.shape(probs))


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    return cross_entropy_and_grad(probs, labels)[0]
