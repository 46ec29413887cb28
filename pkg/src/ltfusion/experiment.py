"""File-level experiment steps: generate, train, evaluate, and the full grid.

Every step reads and writes plain-text files so runs can be diffed and
resumed; the CLI is a thin layer over these functions.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from . import model as head
from .data import DatasetConfig, class_counts, label_counts, read_dataset, generate, write_splits
from .evaluate import (
    MODES,
    MetricsReport,
    evaluate_models,
    tail_slice,
    write_confusion_csv,
    write_report,
)
from .textio import FormatError, dumps
from .train import TrainConfig, train_modality

log = logging.getLogger(__name__)

DATA_MANIFEST = "manifest.json"
OUTPUT_ENV = "LTFUSION_OUTPUT_DIR"


class ConfigError(ValueError):
    """Bad configuration or inputs that do not fit together."""


def _parse_bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_batch(s) -> int:
    if str(s).strip().lower() in ("inf", "full"):
        return 2**62
    return int(s)


DATASET_FIELDS = {f.name: f.type for f in fields(DatasetConfig)}
FIELD_TYPES = {
    "k": int,
    "n_head": int,
    "imbalance_ratio": float,
    "d_a": int,
    "d_b": int,
    "len_min": int,
    "len_max": int,
    "noise_sigma": float,
    "confusion_rate": float,
    "seed": int,
    "loss": str,
    "epochs": int,
    "batch_size": _parse_batch,
    "lr": float,
    "weight_decay": float,
    "hidden_dim": int,
    "clip_len": int,
    "gamma_start": float,
    "gamma_end": float,
    "merge_val_into_train": _parse_bool,
    "output_dir": str,
}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    merge_val_into_train: bool = False
    output_dir: str = "ltfusion-out"
    explicit: frozenset = frozenset()

    def snapshot(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "train": asdict(self.train),
            "merge_val_into_train": self.merge_val_into_train,
        }


def parse_config_text(text: str, source: str = "config") -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys may use dashes."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split(sep, 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        values[key] = value
    return values


def build_config(values: dict, env=None) -> ExperimentConfig:
    """Typed config from raw ``{field: value}`` (strings or already typed)."""
    typed = {}
    for key, raw in values.items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown setting '{key}'")
        try:
            typed[key] = FIELD_TYPES[key](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    explicit = frozenset(typed)
    if "output_dir" not in typed and env and env.get(OUTPUT_ENV):
        typed["output_dir"] = env[OUTPUT_ENV]
    try:
        ds = DatasetConfig(**{k: v for k, v in typed.items() if k in DATASET_FIELDS})
        tr = TrainConfig(**{k: v for k, v in typed.items() if k in TRAIN_KEYS})
        tr.schedule  # validates the gamma endpoints
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(
        dataset=ds,
        train=tr,
        merge_val_into_train=typed.get("merge_val_into_train", False),
        output_dir=typed.get("output_dir", "ltfusion-out"),
        explicit=explicit,
    )


# --- dataset directories -------------------------------------------------

def gen_dataset(cfg: DatasetConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    splits = generate(cfg)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_splits(out_dir, splits)
        manifest = {
            "format": "ltfusion-dataset/1",
            "config": cfg.to_dict(),
            "k": cfg.k,
            "class_counts": class_counts(cfg),
            "split_sizes": {name: len(s) for name, s in splits.items()},
            "files": {name: f"{name}.jsonl" for name in splits},
            "version": __version__,
        }
        (out_dir / DATA_MANIFEST).write_text(dumps(manifest), encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write dataset to {out_dir}: {exc}") from None
    return manifest


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / DATA_MANIFEST
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def load_split(data_dir, name: str):
    path = Path(data_dir) / f"{name}.jsonl"
    if not path.exists():
        raise ConfigError(f"dataset split not found: {path}")
    try:
        return read_dataset(path)
    except FormatError as exc:
        raise ConfigError(str(exc)) from None


def dataset_classes(data_dir, *sample_lists) -> int:
    manifest = read_manifest(data_dir)
    k = manifest.get("k")
    top = max((s.label for samples in sample_lists for s in samples), default=-1) + 1
    if k is None:
        return top
    if top > k:
        raise ConfigError(f"dataset has label {top - 1} but its manifest declares {k} classes")
    return int(k)


def training_counts(data_dir, k: int) -> list[int] | None:
    manifest = read_manifest(data_dir)
    if "class_counts" in manifest:
        return list(manifest["class_counts"])
    path = Path(data_dir) / "train.jsonl"
    if path.exists():
        return label_counts(read_dataset(path), k)
    return None


# --- training --------------------------------------------------------------

def train_run(exp: ExperimentConfig, data_dir, modality: str, out_dir=None) -> tuple[Path, dict]:
    """Train one modality and write ``checkpoint_<m>.json`` and ``run_<m>.json``."""
    if modality not in ("a", "b"):
        raise ConfigError(f"modality must be 'a' or 'b', got {modality!r}")
    out_dir = Path(out_dir or exp.output_dir)
    samples = load_split(data_dir, "train")
    train_size = len(samples)
    if exp.merge_val_into_train:
        samples = samples + load_split(data_dir, "val")
    if not samples:
        raise ConfigError("training split is empty")
    k = dataset_classes(data_dir, samples)
    dims = {"k": k, "d_a": samples[0].seq_a.shape[1], "d_b": samples[0].seq_b.shape[1]}
    for key, actual in dims.items():
        wanted = getattr(exp.dataset, key)
        if key in exp.explicit and wanted != actual:
            raise ConfigError(f"config says {key}={wanted} but the dataset has {key}={actual}")

    t0 = time.perf_counter()
    result = train_modality(samples, modality, k, exp.train)
    duration = time.perf_counter() - t0

    params = result.params
    d, h, _ = params.dims
    tc = exp.train
    meta = {
        "modality": modality,
        "d": d,
        "h": h,
        "k": k,
        "seed": tc.seed,
        "epoch": tc.epochs,
        "loss": tc.loss,
        "schedule": asdict(tc.schedule) if tc.loss == "focal" else None,
        "clip_len": tc.clip_len,
        "merge_val_into_train": exp.merge_val_into_train,
        "version": __version__,
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / f"checkpoint_{modality}.json"
        head.save_checkpoint(ckpt, params, meta, result.optimizer.to_dict())
        manifest = {
            "config": exp.snapshot(),
            "modality": modality,
            "train_size": len(samples),
            "train_split_size": train_size,
            "epoch_loss": result.epoch_loss,
            "checkpoint": ckpt.name,
            "duration_seconds": duration,
            "version": __version__,
        }
        if tc.loss == "focal":
            manifest["gamma"] = result.gammas
        (out_dir / f"run_{modality}.json").write_text(dumps(manifest), encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write to {out_dir}: {exc}") from None
    return ckpt, manifest


# --- evaluation --------------------------------------------------------------

def _load_ckpt(path, slot: str):
    try:
        params, meta, _ = head.load_checkpoint(path)
    except (OSError, FormatError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from None
    if meta.get("modality", slot) != slot:
        raise ConfigError(f"{path} was trained on modality {meta['modality']!r}, not {slot!r}")
    return params, meta


def eval_run(ckpt_a, ckpt_b, data_dir, split: str, out_dir) -> dict[str, MetricsReport]:
    """Evaluate one or two checkpoints; writes one report per mode and a confusion CSV."""
    if ckpt_a is None and ckpt_b is None:
        raise ConfigError("eval needs at least one checkpoint")
    if split not in ("val", "test"):
        raise ConfigError(f"split must be 'val' or 'test', got {split!r}")
    samples = load_split(data_dir, split)
    if not samples:
        raise ConfigError(f"{split} split is empty")
    models, clip_len = {}, None
    for slot, path in (("a", ckpt_a), ("b", ckpt_b)):
        if path is None:
            continue
        params, meta = _load_ckpt(path, slot)
        width = samples[0].seq(slot).shape[1]
        if params.dims[0] != width:
            raise ConfigError(
                f"checkpoint {path} expects {params.dims[0]} features, dataset modality {slot} has {width}"
            )
        clip_len = clip_len or meta.get("clip_len", 16)
        models[slot] = params
    ks = {m.dims[2] for m in models.values()}
    if len(ks) != 1:
        raise ConfigError(f"checkpoints disagree on the number of classes: {sorted(ks)}")
    k = ks.pop()
    top = max(s.label for s in samples)
    if top >= k:
        raise ConfigError(f"dataset label {top} does not fit {k}-class checkpoints")

    if len(models) == 2:
        modes = MODES
    else:
        modes = ("a_only",) if "a" in models else ("b_only",)
    counts = training_counts(data_dir, k)
    out_dir = Path(out_dir)
    reports = {}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for mode in modes:
            r = evaluate_models(models.get("a"), models.get("b"), samples, mode, clip_len)
            r.extra["split"] = split
            if counts is not None and k >= 3:
                head_f1, tail_f1 = tail_slice(r, counts)
                r.extra["head_f1"] = head_f1
                r.extra["tail_f1"] = tail_f1
            write_report(out_dir / f"report_{mode}.json", r)
            reports[mode] = r
        last = modes[-1]
        write_confusion_csv(out_dir / f"confusion_{last}.csv", reports[last].confusion)
    except OSError as exc:
        raise ConfigError(f"cannot write reports to {out_dir}: {exc}") from None
    return reports


def format_table(rows: list[tuple[str, str, MetricsReport]]) -> str:
    header = f"{'modality':<10} {'loss':<6} {'top1':>7} {'top5':>7} {'prec':>7} {'recall':>7} {'f1':>7} {'tailF1':>7}"
    lines = [header, "-" * len(header)]
    names = {"a_only": "A", "b_only": "B", "fused": "A+B"}
    for loss, mode, r in rows:
        tail = r.extra.get("tail_f1", float("nan"))
        lines.append(
            f"{names[mode]:<10} {loss:<6} {100 * r.top1:7.2f} {100 * r.top5:7.2f} "
            f"{100 * r.macro_precision:7.2f} {100 * r.macro_recall:7.2f} {100 * r.macro_f1:7.2f} "
            f"{100 * tail:7.2f}"
        )
    return "\n".join(lines)


def run_grid(exp: ExperimentConfig, out_dir) -> dict:
    """Generate data, train both modalities with CE and with annealed focal,
    and evaluate all six (loss, modality) rows on the test split."""
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    gen_dataset(exp.dataset, data_dir)
    rows, results = [], {}
    for loss in ("ce", "focal"):
        run = ExperimentConfig(
            dataset=exp.dataset,
            train=TrainConfig(**{**asdict(exp.train), "loss": loss}),
            merge_val_into_train=exp.merge_val_into_train,
            explicit=exp.explicit,
        )
        run_dir = out_dir / loss
        ckpt_a, _ = train_run(run, data_dir, "a", run_dir)
        ckpt_b, _ = train_run(run, data_dir, "b", run_dir)
        reports = eval_run(ckpt_a, ckpt_b, data_dir, "test", run_dir)
        for mode, r in reports.items():
            rows.append((loss, mode, r))
            results[(loss, mode)] = r
    summary = {
        "seed": exp.dataset.seed,
        "rows": [
            {
                "loss": loss,
                "mode": mode,
                "top1": r.top1,
                "top5": r.top5,
                "macro_precision": r.macro_precision,
                "macro_recall": r.macro_recall,
                "macro_f1": r.macro_f1,
                "head_f1": r.extra.get("head_f1"),
                "tail_f1": r.extra.get("tail_f1"),
            }
            for loss, mode, r in rows
        ],
    }
    (out_dir / "summary.json").write_text(dumps(summary), encoding="utf-8")
    (out_dir / "summary.txt").write_text(format_table(rows) + "\n", encoding="utf-8")
    return {"reports": results, "table": format_table(rows), "summary": summary}


def grid_orderings(reports: dict) -> dict[str, bool]:
    """The three orderings checked on a grid result."""
    top1 = {key: r.top1 for key, r in reports.items()}
    tail = {key: r.extra["tail_f1"] for key, r in reports.items()}
    fusion = all(
        top1[(loss, "fused")] > max(top1[(loss, "a_only")], top1[(loss, "b_only")])
        for loss in ("ce", "focal")
    )
    return {
        "fusion_beats_single": fusion,
        "focal_fused_top1_ge_ce": top1[("focal", "fused")] >= top1[("ce", "fused")],
        "focal_tail_f1_ge_ce": tail[("focal", "fused")] >= tail[("ce", "fused")],
    }
