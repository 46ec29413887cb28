"""Training loop for one modality pathway."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as head
from .data import Sample, sample_clip
from .loss import GammaSchedule, batch_loss, gamma_at_epoch
from .numkernel import Rng
from .optim import AdamWState, adamw_init, adamw_step

log = logging.getLogger(__name__)

MODALITY_TAG = {"a": 1, "b": 2}


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    loss: str = "focal"
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-4
    weight_decay: float = 0.05
    hidden_dim: int = 64
    clip_len: int = 16
    gamma_start: float = 2.0
    gamma_end: float = 0.1
    seed: int = 42

    def __post_init__(self):
        if self.loss not in ("ce", "focal"):
            raise ValueError(f"loss must be 'ce' or 'focal', got {self.loss!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.hidden_dim < 1 or self.clip_len < 1:
            raise ValueError("hidden_dim and clip_len must be >= 1")

    @property
    def schedule(self) -> GammaSchedule:
        return GammaSchedule(self.gamma_start, self.gamma_end, self.epochs)


@dataclass
class TrainResult:
    params: head.HeadParams
    optimizer: AdamWState
    epoch_loss: list = field(default_factory=list)
    gammas: list = field(default_factory=list)


def run_rng(seed: int, modality: str) -> Rng:
    """Independent stream per (seed, modality) pair."""
    return Rng(Rng(seed).next_u64(1)[0].item() ^ MODALITY_TAG[modality])


def initial_params(cfg: TrainConfig, modality: str, d: int, k: int) -> tuple[head.HeadParams, Rng]:
    rng = run_rng(cfg.seed, modality)
    return head.init_params(rng, d, cfg.hidden_dim, k), rng


def train_modality(samples: list[Sample], modality: str, k: int, cfg: TrainConfig) -> TrainResult:
    """Train a head on one modality of ``samples``.

    Per epoch: reshuffle, draw a fresh random clip per sample, then one AdamW
    step per minibatch. The focal loss uses ``gamma_at_epoch`` for the whole
    epoch; cross-entropy ignores the schedule.
    """
    if not samples:
        raise ValueError("no training samples")
    d = samples[0].seq(modality).shape[1]
    params, rng = initial_params(cfg, modality, d, k)
    opt = adamw_init(
        {name: arr.shape for name, arr in params.as_dict().items()},
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
    )
    labels_all = np.array([s.label for s in samples])
    seqs = [s.seq(modality) for s in samples]
    n = len(samples)
    result = TrainResult(params, opt)
    schedule = cfg.schedule

    for epoch in range(cfg.epochs):
        gamma = gamma_at_epoch(schedule, epoch) if cfg.loss == "focal" else None
        order = rng.permutation(n)
        pooled = np.stack([sample_clip(seqs[i], cfg.clip_len, rng).frames.mean(axis=0) for i in order])
        labels = labels_all[order]
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            x = pooled[lo:lo + cfg.batch_size]
            y = labels[lo:lo + cfg.batch_size]
            try:
                with np.errstate(over="raise", invalid="raise"):
                    hidden, mask, _, probs = head.forward_batch(params, x)
                    value, grad_logits = batch_loss(probs, y, gamma)
            except FloatingPointError as exc:
                raise NumericalError(f"epoch {epoch}, batch starting {lo}: {exc}") from None
            if not math.isfinite(value) or not np.all(np.isfinite(grad_logits)):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch starting {lo}")
            grads = head.backward_batch(params, x, hidden, mask, grad_logits)
            try:
                new = adamw_step(opt, params.as_dict(), grads.as_dict(), no_decay=head.BIAS_NAMES)
            except ValueError as exc:
                raise NumericalError(f"epoch {epoch}: {exc}") from None
            params = head.HeadParams(**new)
            total += value * len(y)
        mean_loss = total / n
        if not math.isfinite(mean_loss):
            raise NumericalError(f"non-finite mean loss at epoch {epoch}")
        result.epoch_loss.append(mean_loss)
        if gamma is not None:
            result.gammas.append(gamma)
        log.info("modality %s epoch %d loss %.6f%s", modality, epoch, mean_loss,
                 "" if gamma is None else f" gamma {gamma:.6f}")
    result.params = params
    return result
