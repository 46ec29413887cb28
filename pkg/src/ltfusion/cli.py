"""Command line entry point: ``ltfusion {gen,train,eval,gradcheck,grid}``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
3 numerical failure during training.

Settings are resolved as defaults < ``--config`` file < environment
(``LTFUSION_OUTPUT_DIR``, output directory only) < command line flags.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import gradcheck
from .experiment import (
    FIELD_TYPES,
    ConfigError,
    build_config,
    eval_run,
    format_table,
    gen_dataset,
    grid_orderings,
    parse_config_text,
    run_grid,
    train_run,
)
from .train import NumericalError

log = logging.getLogger("ltfusion")

DATASET_FLAGS = ("k", "n_head", "imbalance_ratio", "d_a", "d_b", "len_min", "len_max",
                 "noise_sigma", "confusion_rate")
TRAIN_FLAGS = ("loss", "epochs", "batch_size", "lr", "weight_decay", "hidden_dim", "clip_len",
               "gamma_start", "gamma_end")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_settings(p: argparse.ArgumentParser, names) -> None:
    for name in names:
        kwargs = {"dest": name, "default": argparse.SUPPRESS}
        if name == "loss":
            kwargs["choices"] = ("ce", "focal")
        if name == "merge_val_into_train":
            kwargs.update(action="store_const", const=True)
        else:
            kwargs["metavar"] = name.upper()
        p.add_argument(_flag(name), **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltfusion",
        description="Long-tailed multimodal classification with annealed focal loss and late fusion.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="key = value settings file")
        _add_settings(p, ("seed", "output_dir"))

    p = sub.add_parser("gen", help="generate the synthetic long-tailed dataset")
    common(p)
    _add_settings(p, DATASET_FLAGS)

    p = sub.add_parser("train", help="train one modality head")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--modality", choices=("a", "b"), required=True)
    _add_settings(p, TRAIN_FLAGS + ("k", "d_a", "d_b", "merge_val_into_train"))

    p = sub.add_parser("eval", help="evaluate one or two checkpoints")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--ckpt-a", type=Path, help="checkpoint trained on modality a")
    p.add_argument("--ckpt-b", type=Path, help="checkpoint trained on modality b")
    p.add_argument("--split", choices=("val", "test"), default="test")

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    # negative control: add this constant to every analytic gradient
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)

    p = sub.add_parser("grid", help="gen + train CE/focal x a/b + eval, printed as a table")
    common(p)
    _add_settings(p, DATASET_FLAGS + TRAIN_FLAGS + ("merge_val_into_train",))
    return parser


def resolve_config(args):
    values = {}
    if getattr(args, "config", None) is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        values.update(parse_config_text(text, str(args.config)))
    for name in FIELD_TYPES:
        if name in vars(args):
            values[name] = getattr(args, name)
    return build_config(values, env=os.environ)


def cmd_gen(args) -> int:
    exp = resolve_config(args)
    manifest = gen_dataset(exp.dataset, exp.output_dir)
    sizes = manifest["split_sizes"]
    print(f"wrote {exp.output_dir}: train={sizes['train']} val={sizes['val']} test={sizes['test']}")
    print(f"class counts: {manifest['class_counts']}")
    return 0


def cmd_train(args) -> int:
    exp = resolve_config(args)
    ckpt, manifest = train_run(exp, args.data, args.modality)
    losses = manifest["epoch_loss"]
    print(f"trained modality {args.modality} ({exp.train.loss}, {len(losses)} epochs, "
          f"{manifest['train_size']} samples) in {manifest['duration_seconds']:.1f}s")
    print(f"final epoch loss {losses[-1]:.6f}")
    if "gamma" in manifest:
        print(f"gamma {manifest['gamma'][0]:g} -> {manifest['gamma'][-1]:g}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    exp = resolve_config(args)
    reports = eval_run(args.ckpt_a, args.ckpt_b, args.data, args.split, exp.output_dir)
    print(format_table([("-", mode, r) for mode, r in reports.items()]))
    for mode, r in reports.items():
        if "tail_f1" in r.extra:
            print(f"{mode}: head F1 {r.extra['head_f1']:.4f}  tail F1 {r.extra['tail_f1']:.4f}")
    print(f"reports written to {exp.output_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    loss_res, model_res = gradcheck.run_all(args.seed, perturb=args.perturb)
    for line in gradcheck.summary_lines(loss_res, model_res):
        print(line)
    failed = [r for r in list(loss_res.values()) + [model_res] if not r.passed]
    for r in failed:
        print(f"offending: {r.label} instance {r.worst_instance} (rel err {r.max_rel_err:.3e})")
    return 1 if failed else 0


def cmd_grid(args) -> int:
    exp = resolve_config(args)
    out = run_grid(exp, exp.output_dir)
    print(out["table"])
    for name, ok in grid_orderings(out["reports"]).items():
        print(f"{'yes' if ok else 'no ':<4} {name}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "grid": cmd_grid,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
