"""Finite-difference verification of the analytic gradients.

Error measure: for each instance, ``||analytic - numeric|| / max(||analytic||,
||numeric||)`` over the whole gradient (0 when both vanish). Numeric
gradients are central differences with step 1e-6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as head
from . import numkernel as nk
from .loss import ce_terms, focal_terms

STEP = 1e-6
TOLERANCE = 1e-6
LOSS_GAMMAS = (0.0, 0.1, 0.5, 1.0, 2.0)
MODEL_LOSSES = (None, 0.1, 2.0)  # None = cross-entropy


@dataclass
class CheckResult:
    label: str
    max_rel_err: float = 0.0
    worst_instance: int = -1
    count: int = 0
    errors: list = field(default_factory=list)

    def add(self, err: float) -> None:
        self.errors.append(err)
        if err > self.max_rel_err or self.worst_instance < 0:
            self.max_rel_err = max(err, self.max_rel_err)
            self.worst_instance = self.count
        self.count += 1

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= TOLERANCE


def relative_error(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    if den == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / den)


def _loss_and_grad(logits, label, gamma):
    probs = nk.softmax(logits)[None, :]
    if gamma is None:
        v, g = ce_terms(probs, np.array([label]))
    else:
        v, g = focal_terms(probs, np.array([label]), gamma)
    return float(v[0]), g[0]


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * step)
    return out


def check_loss(rng: nk.Rng, per_gamma: int = 40, perturb: float = 0.0) -> dict[float, CheckResult]:
    """Loss-level checks: random logits, labels and class counts per gamma."""
    results = {}
    for gamma in LOSS_GAMMAS:
        res = CheckResult(f"loss gamma={gamma}")
        for _ in range(per_gamma):
            k = rng.randint(2, 10)
            z = rng.gaussian(k) * 2.0
            y = rng.randint(0, k - 1)
            _, analytic = _loss_and_grad(z, y, gamma)
            analytic = analytic + perturb
            numeric = numeric_grad(lambda zz: _loss_and_grad(zz, y, gamma)[0], z)
            res.add(relative_error(analytic, numeric))
        results[gamma] = res
    return results


def _model_loss(params: head.HeadParams, clip, label, gamma) -> float:
    return _loss_and_grad(head.forward(params, clip).logits, label, gamma)[0]


def check_model(rng: nk.Rng, instances: int = 20, d: int = 4, h: int = 5, k: int = 3,
                perturb: float = 0.0) -> CheckResult:
    """End-to-end head checks; the loss cycles through CE, focal 0.1, focal 2."""
    res = CheckResult("head end-to-end")
    for i in range(instances):
        gamma = MODEL_LOSSES[i % len(MODEL_LOSSES)]
        params = head.init_params(rng, d, h, k)
        params.b1 = rng.gaussian(h) * 0.1
        params.b2 = rng.gaussian(k) * 0.1
        t = rng.randint(1, 6)
        clip = rng.gaussian(t * d).reshape(t, d)
        y = rng.randint(0, k - 1)
        trace = head.forward(params, clip)
        _, g_logits = _loss_and_grad(trace.logits, y, gamma)
        grads = head.backward(params, trace, g_logits)
        analytic, numeric = [], []
        for name in head.PARAM_NAMES:
            base = params.as_dict()

            def f(x, name=name, base=base):
                p = head.HeadParams(**{**base, name: x})
                return _model_loss(p, clip, y, gamma)

            analytic.append(getattr(grads, name).ravel())
            numeric.append(numeric_grad(f, base[name]).ravel())
        res.add(relative_error(np.concatenate(analytic) + perturb, np.concatenate(numeric)))
    return res


def run_all(seed: int = 0, perturb: float = 0.0) -> tuple[dict, CheckResult]:
    rng = nk.Rng(seed)
    return check_loss(rng, perturb=perturb), check_model(rng, perturb=perturb)


def summary_lines(loss_results: dict, model_result: CheckResult) -> list[str]:
    lines = []
    for gamma, res in loss_results.items():
        lines.append(
            f"{'PASS' if res.passed else 'FAIL'}  loss  gamma={gamma:<4} n={res.count:<3} "
            f"max_rel_err={res.max_rel_err:.3e} (instance {res.worst_instance})"
        )
    lines.append(
        f"{'PASS' if model_result.passed else 'FAIL'}  head  n={model_result.count:<3} "
        f"max_rel_err={model_result.max_rel_err:.3e} (instance {model_result.worst_instance})"
    )
    overall = max([r.max_rel_err for r in loss_results.values()] + [model_result.max_rel_err])
    lines.append(f"max relative error {overall:.3e} (tolerance {TOLERANCE:g})")
    return lines


def max_error(loss_results: dict, model_result: CheckResult) -> float:
    errs = [r.max_rel_err for r in loss_results.values()] + [model_result.max_rel_err]
    return max(errs) if errs else math.nan
