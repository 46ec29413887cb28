"""Per-modality classifier: temporal mean pooling + two-layer perceptron head.

    pooled = mean over the clip's frames          (D,)
    hidden = relu(w1 @ pooled + b1)               (H,)
    logits = w2 @ hidden + b2                     (K,)
    probs  = softmax(logits)

The single-clip functions (:func:`forward`, :func:`backward`,
:func:`predict_proba`) go through :mod:`ltfusion.numkernel`; the ``*_batch``
variants do the same algebra with matrix products for training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .textio import FormatError, decode_array, dumps, encode_array

PARAM_NAMES = ("w1", "b1", "w2", "b2")
BIAS_NAMES = frozenset({"b1", "b2"})
CHECKPOINT_FORMAT = "ltfusion-checkpoint/1"


@dataclass
class HeadParams:
    w1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (K, H)
    b2: np.ndarray  # (K,)

    @property
    def dims(self) -> tuple[int, int, int]:
        """``(D, H, K)``."""
        return self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self) -> None:
        h, d = self.w1.shape
        k = self.w2.shape[0]
        expected = {"w1": (h, d), "b1": (h,), "w2": (k, h), "b2": (k,)}
        for name, arr in self.as_dict().items():
            if arr.shape != expected[name]:
                raise nk.ShapeError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


# Gradients share the parameter layout.
HeadGrads = HeadParams


@dataclass
class ForwardTrace:
    pooled: np.ndarray
    hidden: np.ndarray
    mask: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def init_params(rng: nk.Rng, d: int, h: int, k: int) -> HeadParams:
    """He-style Gaussian weights, zero biases. Draws w1 then w2 from ``rng``."""
    for name, val in (("d", d), ("h", h), ("k", k)):
        if int(val) != val or val < 1:
            raise ValueError(f"{name} must be a positive integer, got {val}")
    w1 = rng.gaussian(h * d).reshape(h, d) * np.sqrt(2.0 / d)
    w2 = rng.gaussian(k * h).reshape(k, h) * np.sqrt(2.0 / h)
    return HeadParams(w1=w1, b1=np.zeros(h), w2=w2, b2=np.zeros(k))


def pool(clip) -> np.ndarray:
    return nk.as_matrix(clip, "clip").mean(axis=0)


def forward(params: HeadParams, clip) -> ForwardTrace:
    clip = nk.as_matrix(clip, "clip")
    d = params.w1.shape[1]
    if clip.shape[1] != d:
        raise nk.ShapeError(f"clip frames have width {clip.shape[1]}, model expects {d}")
    pooled = clip.mean(axis=0)
    hidden, mask = nk.relu(nk.matvec(params.w1, pooled) + params.b1)
    logits = nk.matvec(params.w2, hidden) + params.b2
    return ForwardTrace(pooled, hidden, mask, logits, nk.softmax(logits))


def backward(params: HeadParams, trace: ForwardTrace, grad_logits) -> HeadGrads:
    g = nk.as_vector(grad_logits, "grad_logits")
    k = params.w2.shape[0]
    if g.shape[0] != k:
        raise nk.ShapeError(f"grad_logits has length {g.shape[0]}, model has {k} classes")
    grad_hidden = nk.matvec(params.w2.T, g) * trace.mask
    return HeadGrads(
        w1=np.outer(grad_hidden, trace.pooled),
        b1=grad_hidden,
        w2=np.outer(g, trace.hidden),
        b2=g.copy(),
    )


def predict_proba(params: HeadParams, clip) -> np.ndarray:
    return forward(params, clip).probs


def forward_batch(params: HeadParams, pooled: np.ndarray):
    """Batched forward on pooled features ``(n, D)``.

    Returns ``(hidden, mask, logits, probs)``.
    """
    pre = pooled @ params.w1.T + params.b1
    mask = (pre > 0).astype(np.float64)
    hidden = pre * mask
    logits = hidden @ params.w2.T + params.b2
    return hidden, mask, logits, nk.softmax_rows(logits)


def backward_batch(params: HeadParams, pooled, hidden, mask, grad_logits) -> HeadGrads:
    """Gradients summed over the batch. ``grad_logits`` carries any 1/n scaling."""
    grad_hidden = (grad_logits @ params.w2) * mask
    return HeadGrads(
        w1=grad_hidden.T @ pooled,
        b1=grad_hidden.sum(axis=0),
        w2=grad_logits.T @ hidden,
        b2=grad_logits.sum(axis=0),
    )


def save_checkpoint(path, params: HeadParams, meta: dict, optimizer: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta,
        "params": {name: encode_array(arr) for name, arr in params.as_dict().items()},
    }
    if optimizer is not None:
        doc["optimizer"] = optimizer
    Path(path).write_text(dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> tuple[HeadParams, dict, dict | None]:
    """Read a checkpoint; returns ``(params, meta, optimizer_state_or_None)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a valid checkpoint document ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: missing or unknown checkpoint format tag")
    try:
        raw = doc["params"]
        arrays = {
            name: decode_array(raw[name], f"params.{name}", 2 if name[0] == "w" else 1)
            for name in PARAM_NAMES
        }
    except KeyError as exc:
        raise FormatError(f"{path}: missing parameter {exc}") from None
    params = HeadParams(**arrays)
    try:
        params.validate()
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return params, doc.get("meta", {}), doc.get("optimizer")
