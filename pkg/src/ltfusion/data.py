"""Synthetic long-tailed paired-modality data, clip sampling and dataset files.

Each class ``k`` owns one prototype vector per modality. A sample is a
sequence of ``T`` frames per modality, each frame being

    prototype + per-sample offset + per-frame Gaussian noise

with the same ``T`` for both modalities. With probability ``q`` one of the two
modalities (fair coin) has its prototype replaced by the midpoint between the
class prototype and the prototype of class ``(k + 1) % K``. That modality is
then ambiguous for the sample while the other one stays clean, which is what
gives late fusion something to do.

Dataset files are UTF-8 JSON lines, one sample per line::

    {"id": 0, "label": 3,
     "seq_a": {"shape": [T, D_a], "data": [...]},
     "seq_b": {"shape": [T, D_b], "data": [...]}}

Any producer that writes this layout (e.g. features exported from a video
backbone) can be read back with :func:`read_dataset`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numkernel import Rng
from .textio import FormatError, decode_array, encode_array

# Prototype entries ~ N(0, PROTO_SCALE^2); per-sample offset ~ N(0, (OFFSET_FRACTION*sigma)^2).
PROTO_SCALE = 1.5
OFFSET_FRACTION = 0.5
SPLITS = ("train", "val", "test")


class AlignmentError(FormatError):
    """The two modality sequences of a record have different lengths."""


@dataclass
class Sample:
    id: int
    label: int
    seq_a: np.ndarray
    seq_b: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.seq_a.shape == other.seq_a.shape
            and self.seq_b.shape == other.seq_b.shape
            and np.array_equal(self.seq_a, other.seq_a)
            and np.array_equal(self.seq_b, other.seq_b)
        )

    def seq(self, modality: str) -> np.ndarray:
        if modality == "a":
            return self.seq_a
        if modality == "b":
            return self.seq_b
        raise ValueError(f"unknown modality {modality!r}")


@dataclass(frozen=True)
class DatasetConfig:
    k: int = 12
    n_head: int = 200
    imbalance_ratio: float = 50.0
    d_a: int = 16
    d_b: int = 16
    len_min: int = 8
    len_max: int = 48
    noise_sigma: float = 1.0
    confusion_rate: float = 0.3
    seed: int = 42

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.n_head < 1:
            raise ValueError(f"n_head must be >= 1, got {self.n_head}")
        if not self.imbalance_ratio >= 1:
            raise ValueError(f"imbalance_ratio must be >= 1, got {self.imbalance_ratio}")
        if self.d_a < 1 or self.d_b < 1:
            raise ValueError("feature dims must be >= 1")
        if self.len_min < 1:
            raise ValueError(f"len_min must be >= 1, got {self.len_min}")
        if self.len_max < self.len_min:
            raise ValueError(f"len_max ({self.len_max}) < len_min ({self.len_min})")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.confusion_rate <= 1:
            raise ValueError(f"confusion_rate must lie in [0, 1], got {self.confusion_rate}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Clip:
    frames: np.ndarray
    source_start: int


def class_counts(cfg: DatasetConfig) -> list[int]:
    """Training counts ``round(n_head * rho ** (-k / (K - 1)))``, at least 1 each."""
    counts = []
    for k in range(cfg.k):
        n = cfg.n_head * cfg.imbalance_ratio ** (-k / (cfg.k - 1))
        counts.append(max(1, math.floor(n + 0.5)))
    return counts


def eval_count(cfg: DatasetConfig) -> int:
    """Per-class size of the balanced val and test splits."""
    return math.ceil(cfg.n_head / 10)


def class_prototypes(cfg: DatasetConfig) -> tuple[np.ndarray, np.ndarray]:
    """The ``(K, D_a)`` and ``(K, D_b)`` prototypes :func:`generate` uses."""
    rng = Rng(cfg.seed)
    return _draw_prototypes(cfg, rng)


def _draw_prototypes(cfg, rng):
    proto_a = rng.gaussian(cfg.k * cfg.d_a).reshape(cfg.k, cfg.d_a) * PROTO_SCALE
    proto_b = rng.gaussian(cfg.k * cfg.d_b).reshape(cfg.k, cfg.d_b) * PROTO_SCALE
    return proto_a, proto_b


def generate(cfg: DatasetConfig) -> dict[str, list[Sample]]:
    """Build ``{"train": [...], "val": [...], "test": [...]}``.

    Draw order from a single ``Rng(cfg.seed)``: prototypes A then B, then for
    each split, class and sample: length, corruption coin, modality coin,
    offsets A/B, frame noise A/B.
    """
    rng = Rng(cfg.seed)
    proto_a, proto_b = _draw_prototypes(cfg, rng)
    sizes = {
        "train": class_counts(cfg),
        "val": [eval_count(cfg)] * cfg.k,
        "test": [eval_count(cfg)] * cfg.k,
    }
    sigma = cfg.noise_sigma
    next_id = 0
    out = {}
    for split in SPLITS:
        samples = []
        for label, n in enumerate(sizes[split]):
            neighbour = (label + 1) % cfg.k
            for _ in range(n):
                t = rng.randint(cfg.len_min, cfg.len_max)
                corrupt, coin = rng.uniform(2)
                mu_a, mu_b = proto_a[label], proto_b[label]
                if corrupt < cfg.confusion_rate:
                    if coin < 0.5:
                        mu_a = 0.5 * (mu_a + proto_a[neighbour])
                    else:
                        mu_b = 0.5 * (mu_b + proto_b[neighbour])
                off_a = rng.gaussian(cfg.d_a) * (OFFSET_FRACTION * sigma)
                off_b = rng.gaussian(cfg.d_b) * (OFFSET_FRACTION * sigma)
                seq_a = mu_a + off_a + rng.gaussian(t * cfg.d_a).reshape(t, cfg.d_a) * sigma
                seq_b = mu_b + off_b + rng.gaussian(t * cfg.d_b).reshape(t, cfg.d_b) * sigma
                samples.append(Sample(next_id, label, seq_a, seq_b))
                next_id += 1
        out[split] = samples
    return out


def merge_splits(*splits: list[Sample]) -> list[Sample]:
    return [s for split in splits for s in split]


def _check_clip_args(seq, clip_len):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ValueError(f"expected a non-empty (T, D) sequence, got shape {seq.shape}")
    if clip_len < 1:
        raise ValueError(f"clip_len must be >= 1, got {clip_len}")
    return seq


def _take(seq: np.ndarray, start: int, clip_len: int) -> Clip:
    t = seq.shape[0]
    if t >= clip_len:
        return Clip(seq[start:start + clip_len].copy(), start)
    pad = np.repeat(seq[-1:], clip_len - t, axis=0)
    return Clip(np.concatenate([seq, pad], axis=0), 0)


def sample_clip(seq, clip_len: int, rng: Rng) -> Clip:
    """Random window of ``clip_len`` consecutive frames.

    Sequences shorter than the clip are padded by repeating their last frame.
    The generator is only consulted when ``T > clip_len``.
    """
    seq = _check_clip_args(seq, clip_len)
    t = seq.shape[0]
    start = rng.randint(0, t - clip_len) if t > clip_len else 0
    return _take(seq, start, clip_len)


def eval_clip(seq, clip_len: int) -> Clip:
    """Temporally centred window, padded like :func:`sample_clip`."""
    seq = _check_clip_args(seq, clip_len)
    t = seq.shape[0]
    start = (t - clip_len) // 2 if t >= clip_len else 0
    return _take(seq, start, clip_len)


def sample_to_record(s: Sample) -> dict:
    return {
        "id": int(s.id),
        "label": int(s.label),
        "seq_a": encode_array(s.seq_a),
        "seq_b": encode_array(s.seq_b),
    }


def record_to_sample(rec, where: str = "record") -> Sample:
    if not isinstance(rec, dict):
        raise FormatError(f"{where}: expected an object")
    for key in ("id", "label"):
        if key not in rec:
            raise FormatError(f"{where}: missing field '{key}'")
        if not isinstance(rec[key], int) or isinstance(rec[key], bool):
            raise FormatError(f"{where}: field '{key}' must be an integer")
    if rec["label"] < 0:
        raise FormatError(f"{where}: field 'label' must be >= 0")
    seqs = {}
    for key in ("seq_a", "seq_b"):
        if key not in rec:
            raise FormatError(f"{where}: missing field '{key}'")
        seqs[key] = decode_array(rec[key], f"{where}: field '{key}'", ndim=2)
        if seqs[key].shape[0] < 1 or seqs[key].shape[1] < 1:
            raise FormatError(f"{where}: field '{key}' is empty")
    if seqs["seq_a"].shape[0] != seqs["seq_b"].shape[0]:
        raise AlignmentError(
            f"{where}: modalities are not aligned "
            f"(seq_a has {seqs['seq_a'].shape[0]} frames, seq_b has {seqs['seq_b'].shape[0]})"
        )
    return Sample(rec["id"], rec["label"], seqs["seq_a"], seqs["seq_b"])


def write_dataset(path, samples: list[Sample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), separators=(",", ":"), allow_nan=False))
            fh.write("\n")


def read_dataset(path) -> list[Sample]:
    samples = []
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: malformed record ({exc.msg} at column {exc.colno})") from None
            s = record_to_sample(rec, where)
            d = (s.seq_a.shape[1], s.seq_b.shape[1])
            if dims is None:
                dims = d
            elif d != dims:
                raise FormatError(f"{where}: feature dims {d} differ from earlier records {dims}")
            samples.append(s)
    return samples


def write_splits(out_dir, splits: dict[str, list[Sample]]) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {}
    for name, samples in splits.items():
        paths[name] = out_dir / f"{name}.jsonl"
        write_dataset(paths[name], samples)
    return paths


def read_splits(data_dir, names=SPLITS) -> dict[str, list[Sample]]:
    data_dir = Path(data_dir)
    return {name: read_dataset(data_dir / f"{name}.jsonl") for name in names}


def label_counts(samples: list[Sample], k: int) -> list[int]:
    counts = [0] * k
    for s in samples:
        counts[s.label] += 1
    return counts
