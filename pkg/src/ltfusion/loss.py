"""Cross-entropy and focal losses with gradients w.r.t. the logits.

Every loss takes the softmax output ``probs`` together with the true label and
returns the loss value and its gradient with respect to the *logits* that
produced ``probs``. The focal loss is the usual ``-(1 - p_t)**gamma * log(p_t)``
on the true class ``t``; ``gamma = 0`` reduces it to cross-entropy.

The focusing parameter is annealed once per epoch along a geometric path
from ``gamma_start`` to ``gamma_end`` (see :func:`gamma_at_epoch`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossValue:
    value: float
    grad_logits: np.ndarray


@dataclass(frozen=True)
class GammaSchedule:
    gamma_start: float = 2.0
    gamma_end: float = 0.1
    total_epochs: int = 20

    def __post_init__(self):
        if not self.gamma_start > 0:
            raise ValueError(f"gamma_start must be > 0, got {self.gamma_start}")
        if not self.gamma_end > 0:
            raise ValueError(f"gamma_end must be > 0, got {self.gamma_end}")
        if self.gamma_end > self.gamma_start:
            raise ValueError("gamma_end must not exceed gamma_start")
        if int(self.total_epochs) != self.total_epochs or self.total_epochs < 1:
            raise ValueError(f"total_epochs must be a positive integer, got {self.total_epochs}")


def gamma_at_epoch(schedule: GammaSchedule, epoch: int) -> float:
    """Focusing parameter for a 0-based epoch.

    ``gamma(e) = start * (end / start) ** (e / (total_epochs - 1))``, so the
    first epoch uses ``start`` and the last uses ``end`` exactly.
    """
    n = schedule.total_epochs
    if not 0 <= epoch < n:
        raise ValueError(f"epoch {epoch} outside [0, {n})")
    if epoch == 0 or n == 1:
        return float(schedule.gamma_start)
    if epoch == n - 1:
        return float(schedule.gamma_end)
    ratio = schedule.gamma_end / schedule.gamma_start
    return float(schedule.gamma_start * ratio ** (epoch / (n - 1)))


def gamma_sequence(schedule: GammaSchedule) -> list[float]:
    return [gamma_at_epoch(schedule, e) for e in range(schedule.total_epochs)]


def _check_probs_labels(probs: np.ndarray, labels: np.ndarray) -> None:
    if probs.ndim != 2:
        raise ValueError(f"expected probabilities of shape (n, K), got {probs.shape}")
    if labels.shape != (probs.shape[0],):
        raise ValueError(
            f"got {labels.shape[0] if labels.ndim == 1 else labels.shape} labels "
            f"for {probs.shape[0]} distributions"
        )
    k = probs.shape[1]
    bad = (labels < 0) | (labels >= k)
    if np.any(bad):
        raise ValueError(f"label {int(labels[bad][0])} out of range for {k} classes")


def focal_terms(probs, labels, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample focal losses and logit gradients for a batch.

    Returns ``(values, grads)`` of shapes ``(n,)`` and ``(n, K)``. Both
    ``p_t`` and ``1 - p_t`` are clamped to ``[1e-12, 1]`` before the log and
    power so that ``gamma < 1`` stays finite at ``p_t = 1``.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    _check_probs_labels(probs, labels)
    rows = np.arange(probs.shape[0])
    p_t = np.clip(probs[rows, labels], PROB_FLOOR, 1.0)
    u = np.clip(1.0 - p_t, PROB_FLOOR, 1.0)
    log_pt = np.log(p_t)
    weight = u**gamma
    values = -weight * log_pt
    # dL/dp_t, then dp_t/dz_k = p_t * (1{k=t} - p_k)
    d_pt = gamma * u ** (gamma - 1.0) * log_pt - weight / p_t
    onehot = np.zeros_like(probs)
    onehot[rows, labels] = 1.0
    grads = (d_pt * p_t)[:, None] * (onehot - probs)
    return values, grads


def ce_terms(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy values and logit gradients ``p - onehot``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    _check_probs_labels(probs, labels)
    rows = np.arange(probs.shape[0])
    values = -np.log(np.clip(probs[rows, labels], PROB_FLOOR, 1.0))
    grads = probs.copy()
    grads[rows, labels] -= 1.0
    return values, grads


def ce_loss(probs, label: int) -> LossValue:
    values, grads = ce_terms(np.asarray(probs, dtype=np.float64)[None, :], np.array([label]))
    return LossValue(float(values[0]), grads[0])


def focal_loss(probs, label: int, gamma: float) -> LossValue:
    values, grads = focal_terms(
        np.asarray(probs, dtype=np.float64)[None, :], np.array([label]), gamma
    )
    return LossValue(float(values[0]), grads[0])


def batch_loss(probs_batch, labels, gamma: float | None) -> tuple[float, np.ndarray]:
    """Mean loss over a batch and the per-sample logit gradients of that mean.

    ``gamma=None`` selects cross-entropy; any number selects the focal loss.
    """
    probs_batch = np.asarray(probs_batch, dtype=np.float64)
    labels = np.asarray(labels)
    if probs_batch.ndim != 2 or probs_batch.shape[0] == 0:
        raise ValueError("batch_loss: empty batch")
    if labels.shape != (probs_batch.shape[0],):
        raise ValueError(
            f"batch_loss: {probs_batch.shape[0]} distributions but {labels.size} labels"
        )
    if gamma is None:
        values, grads = ce_terms(probs_batch, labels)
    else:
        values, grads = focal_terms(probs_batch, labels, gamma)
    n = probs_batch.shape[0]
    return float(values.mean()), grads / n
