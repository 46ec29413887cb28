"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .textio import decode_array, encode_array


@dataclass
class AdamWState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        # lr = 0 is allowed: it is the "no-op training" control
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step_count": self.step_count,
            "m": {k: encode_array(a) for k, a in self.m.items()},
            "v": {k: encode_array(a) for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamWState":
        return cls(
            lr=d["lr"],
            beta1=d["beta1"],
            beta2=d["beta2"],
            eps=d["eps"],
            weight_decay=d["weight_decay"],
            step_count=d["step_count"],
            m={k: decode_array(a, f"optimizer.m.{k}") for k, a in d["m"].items()},
            v={k: decode_array(a, f"optimizer.v.{k}") for k, a in d["v"].items()},
        )


def adamw_init(param_shapes: dict, **hyper) -> AdamWState:
    """Fresh state with zero moments for ``{name: shape}``."""
    state = AdamWState(**hyper)
    for name, shape in param_shapes.items():
        state.m[name] = np.zeros(shape)
        state.v[name] = np.zeros(shape)
    return state


def adamw_step(state: AdamWState, params: dict, grads: dict, no_decay=()) -> dict:
    """One AdamW update. Mutates ``state``; returns new parameter arrays.

    Parameters named in ``no_decay`` skip the decoupled weight decay term.
    """
    if set(grads) != set(params) or set(params) != set(state.m):
        raise ValueError(
            f"parameter names differ: params {sorted(params)}, grads {sorted(grads)}, "
            f"state {sorted(state.m)}"
        )
    for name, g in grads.items():
        g = np.asarray(g)
        if g.shape != np.shape(params[name]) or g.shape != state.m[name].shape:
            raise ValueError(
                f"{name}: gradient shape {g.shape} vs parameter shape {np.shape(params[name])}"
            )
        if not np.all(np.isfinite(g)):
            raise ValueError(f"{name}: non-finite gradient")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if name not in no_decay:
            update = update + state.lr * state.weight_decay * theta
        out[name] = theta - update
    return out
