"""Late fusion and the classification metric suite.

Precision, recall and F1 are reported per class and as macro (unweighted)
means over the classes that have at least one true sample in the split.
Support-weighted means are reported alongside for comparison.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as head
from .data import Sample, eval_clip
from .textio import FormatError, dumps

MODES = ("a_only", "b_only", "fused")
REPORT_FORMAT = "ltfusion-report/1"


def late_fuse(pa, pb) -> np.ndarray:
    """Arithmetic mean of two class distributions (works row-wise on batches)."""
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValueError(f"cannot fuse distributions of shapes {pa.shape} and {pb.shape}")
    return (pa + pb) / 2.0


def _label_ranks(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # position of the true label in a descending sort with lowest-index tie-break
    p_true = probs[np.arange(len(labels)), labels][:, None]
    idx = np.arange(probs.shape[1])[None, :]
    ahead = (probs > p_true) | ((probs == p_true) & (idx < labels[:, None]))
    return ahead.sum(axis=1)


def top_k_accuracy(probs, labels, k: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("top_k_accuracy: empty input")
    if labels.shape != (probs.shape[0],):
        raise ValueError("top_k_accuracy: labels and predictions differ in length")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return float(np.mean(_label_ranks(probs, labels) < k))


def predictions(probs) -> np.ndarray:
    """Row-wise argmax, ties to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=1)


def confusion_matrix(pred_labels, true_labels, k: int) -> np.ndarray:
    """``C[t, p]`` = number of samples of true class t predicted as p."""
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError("confusion_matrix: need equal-length, non-empty label sequences")
    for name, arr in (("predicted", pred), ("true", true)):
        bad = (arr < 0) | (arr >= k)
        if bad.any():
            raise ValueError(f"{name} label {int(arr[bad][0])} out of range for {k} classes")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def macro_prf(confusion) -> dict:
    """Per-class and macro precision/recall/F1 from a confusion matrix.

    0/0 is taken as 0. Macro means skip classes with zero support.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative entries")
    if cm.sum() == 0:
        raise ValueError("confusion matrix is all zeros")
    diag = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    precision = _safe_div(diag, cm.sum(axis=0))
    recall = _safe_div(diag, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    present = support > 0
    weights = support / support.sum()
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "support": support,
        "macro_precision": float(precision[present].mean()),
        "macro_recall": float(recall[present].mean()),
        "macro_f1": float(f1[present].mean()),
        "weighted_precision": float(weights @ precision),
        "weighted_recall": float(weights @ recall),
        "weighted_f1": float(weights @ f1),
    }


@dataclass
class MetricsReport:
    top1: float
    top5: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    confusion: np.ndarray
    support: np.ndarray
    mode: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]

    def check(self) -> None:
        """Raise if the report is internally inconsistent."""
        if not np.array_equal(self.confusion.sum(axis=1), self.support):
            raise AssertionError("confusion row sums differ from supports")
        trace_acc = np.trace(self.confusion) / self.support.sum()
        if abs(trace_acc - self.top1) > 1e-12:
            raise AssertionError(f"trace/total = {trace_acc} but top1 = {self.top1}")
        if self.top5 < self.top1:
            raise AssertionError("top5 < top1")

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "mode": self.mode,
            "num_classes": self.num_classes,
            "num_samples": int(self.support.sum()),
            "top1": self.top1,
            "top5": self.top5,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "averaging": "macro means skip classes with zero support; weighted means use support",
            "per_class_precision": [float(x) for x in self.per_class_precision],
            "per_class_recall": [float(x) for x in self.per_class_recall],
            "per_class_f1": [float(x) for x in self.per_class_f1],
            "support": [int(x) for x in self.support],
            "confusion": [[int(x) for x in row] for row in self.confusion],
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("format") != REPORT_FORMAT:
            raise FormatError("not a metrics report")
        known = {
            "format", "mode", "num_classes", "num_samples", "averaging", "top1", "top5",
            "macro_precision", "macro_recall", "macro_f1", "weighted_precision",
            "weighted_recall", "weighted_f1", "per_class_precision", "per_class_recall",
            "per_class_f1", "support", "confusion",
        }
        return cls(
            top1=d["top1"],
            top5=d["top5"],
            per_class_precision=np.array(d["per_class_precision"], dtype=np.float64),
            per_class_recall=np.array(d["per_class_recall"], dtype=np.float64),
            per_class_f1=np.array(d["per_class_f1"], dtype=np.float64),
            macro_precision=d["macro_precision"],
            macro_recall=d["macro_recall"],
            macro_f1=d["macro_f1"],
            weighted_precision=d["weighted_precision"],
            weighted_recall=d["weighted_recall"],
            weighted_f1=d["weighted_f1"],
            confusion=np.array(d["confusion"], dtype=np.int64),
            support=np.array(d["support"], dtype=np.int64),
            mode=d.get("mode", ""),
            extra={k: v for k, v in d.items() if k not in known},
        )


def build_report(probs, labels, mode: str = "") -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = probs.shape[1]
    cm = confusion_matrix(predictions(probs), labels, k)
    prf = macro_prf(cm)
    report = MetricsReport(
        top1=top_k_accuracy(probs, labels, 1),
        top5=top_k_accuracy(probs, labels, 5),
        per_class_precision=prf["precision"],
        per_class_recall=prf["recall"],
        per_class_f1=prf["f1"],
        macro_precision=prf["macro_precision"],
        macro_recall=prf["macro_recall"],
        macro_f1=prf["macro_f1"],
        weighted_precision=prf["weighted_precision"],
        weighted_recall=prf["weighted_recall"],
        weighted_f1=prf["weighted_f1"],
        confusion=cm,
        support=prf["support"],
        mode=mode,
    )
    report.check()
    return report


def predict_samples(params: head.HeadParams, samples: list[Sample], modality: str, clip_len: int) -> np.ndarray:
    """Class distributions for the centred evaluation clip of every sample."""
    return np.stack(
        [head.predict_proba(params, eval_clip(s.seq(modality), clip_len).frames) for s in samples]
    )


def evaluate_models(model_a, model_b, samples: list[Sample], mode: str, clip_len: int = 16) -> MetricsReport:
    """Metrics for one row of the modality grid.

    ``model_a`` / ``model_b`` may be None when the mode does not need them.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if not samples:
        raise ValueError("evaluate_models: empty dataset")
    needed = {"a_only": (model_a,), "b_only": (model_b,), "fused": (model_a, model_b)}[mode]
    if any(m is None for m in needed):
        raise ValueError(f"mode {mode!r} needs a model for each modality it uses")
    k = needed[0].dims[2]
    if any(m.dims[2] != k for m in needed):
        raise ValueError("models disagree on the number of classes")
    labels = np.array([s.label for s in samples])
    if labels.max() >= k:
        raise ValueError(f"dataset label {int(labels.max())} out of range for {k}-class models")
    if mode == "a_only":
        probs = predict_samples(model_a, samples, "a", clip_len)
    elif mode == "b_only":
        probs = predict_samples(model_b, samples, "b", clip_len)
    else:
        probs = late_fuse(
            predict_samples(model_a, samples, "a", clip_len),
            predict_samples(model_b, samples, "b", clip_len),
        )
    return build_report(probs, labels, mode)


def tail_slice(report: MetricsReport, class_counts) -> tuple[float, float]:
    """Mean per-class F1 over the most and the least frequent thirds of classes.

    Classes are ordered by training count (descending, stable). Classes with
    no support in the evaluated split are left out of the slice means.
    """
    counts = np.asarray(class_counts)
    k = report.num_classes
    if counts.shape != (k,):
        raise ValueError(f"need {k} class counts, got {counts.shape}")
    if k < 3:
        raise ValueError("tail_slice needs at least 3 classes")
    order = np.argsort(-counts, kind="stable")
    third = k // 3

    def mean_f1(classes):
        classes = [c for c in classes if report.support[c] > 0]
        if not classes:
            return float("nan")
        return float(np.mean(report.per_class_f1[classes]))

    return mean_f1(order[:third]), mean_f1(order[-third:])


def write_report(path, report: MetricsReport) -> None:
    Path(path).write_text(dumps(report.to_dict()), encoding="utf-8")


def read_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def confusion_csv(confusion) -> str:
    cm = np.asarray(confusion)
    buf = io.StringIO()
    buf.write("true\\pred," + ",".join(str(j) for j in range(cm.shape[1])) + "\n")
    for i, row in enumerate(cm):
        buf.write(f"{i}," + ",".join(str(int(x)) for x in row) + "\n")
    return buf.getvalue()


def write_confusion_csv(path, confusion) -> None:
    Path(path).write_text(confusion_csv(confusion), encoding="utf-8")


def read_confusion_csv(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split(",")[1:]
    rows = []
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if int(cells[0]) != i or len(cells) - 1 != len(header):
            raise FormatError(f"{path}: bad confusion row {i + 1}")
        rows.append([int(c) for c in cells[1:]])
    return np.array(rows, dtype=np.int64)
