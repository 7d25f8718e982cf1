"""Command-line entry point.

Subcommands:

  count      symbolic parameter/FLOP ledger for a model specification
  parity     per-pixel cost comparison of convolution vs attention extents
  gradcheck  finite-difference verification of every layer's backward pass
  verify     oracle-equivalence, invariant, and gradient suites
  train      desk-scale training run; writes metrics and checkpoints
  eval       accuracy of a saved checkpoint on a dataset's validation split

Exit status: 0 on success, 1 on any failed check or runtime error, 2 on a
usage error. Every run echoes its fully resolved configuration in the config
file format, so outputs are reproducible given argv and seeds. Timing lines
are prefixed with "# time" so byte-comparisons can filter them out.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .cost import CONVENTION, cost_parity, ledger
from .data import DATA_CONFIG_KEYS, DatasetSource, load_data
from .model import (
    MODEL_CONFIG_KEYS,
    ModelSpec,
    build_model,
    load_checkpoint,
    load_state_into,
    read_config,
)
from .train import TRAIN_CONFIG_KEYS, TrainConfig, evaluate, train_loop
from .verify import gradcheck_suite, run_all

_PRECISIONS = {"f32": np.float32, "f64": np.float64}

_MODEL_FLAGS = (
    ("--depth", "depth", int),
    ("--block-counts", "block_counts", str),
    ("--width-multiplier", "width_multiplier", float),
    ("--groups", "groups", str),
    ("--stem", "stem", str),
    ("--k", "k", int),
    ("--heads", "heads", int),
    ("--encoding-mode", "encoding_mode", str),
    ("--num-classes", "num_classes", int),
    ("--resolution", "input_resolution", int),
    ("--small-input", "small_input", str),
    ("--stem-mixtures", "stem_mixtures", int),
    ("--stem-d-emb", "stem_d_emb", int),
    ("--bn-decay", "bn_decay", float),
)

_TRAIN_FLAGS = (
    ("--epochs", "epochs", int),
    ("--batch-size", "batch_size", int),
    ("--peak-lr", "peak_lr", float),
    ("--momentum", "momentum", float),
    ("--warmup-epochs", "warmup_epochs", float),
    ("--ema-decay", "ema_decay", float),
    ("--label-smoothing", "label_smoothing", float),
    ("--augment", "augment", str),
)

_DATA_FLAGS = (
    ("--data-kind", "data_kind", str),
    ("--data-path", "data_path", str),
    ("--data-task", "data_task", str),
    ("--data-size", "data_size", int),
    ("--data-seed", "data_seed", int),
    ("--data-limit", "data_limit", int),
    ("--data-val-fraction", "data_val_fraction", float),
)


def _add_flags(parser: argparse.ArgumentParser, flags) -> None:
    for flag, dest, typ in flags:
        parser.add_argument(flag, dest=dest, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="localattn",
        description="local 2D self-attention as a drop-in replacement for "
                    "spatial convolution")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="plain-text `key = value` configuration file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--precision", choices=sorted(_PRECISIONS), default=None)
    common.add_argument("--out", default=None,
                        help="where to write outputs (directory for train, "
                             "file for report commands)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", parents=[common],
                       help="parameter/FLOP ledger for a model spec")
    _add_flags(p, _MODEL_FLAGS)

    p = sub.add_parser("parity", parents=[common],
                       help="conv vs attention per-pixel cost sweep")
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--conv-k", dest="conv_k", type=int, default=3)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--mode", default="relative")

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference gradient verification")
    p.add_argument("--tolerance", type=float, default=1e-4)

    sub.add_parser("verify", parents=[common],
                   help="oracle, invariant, and gradient suites")

    p = sub.add_parser("train", parents=[common], help="desk-scale training run")
    _add_flags(p, _MODEL_FLAGS)
    _add_flags(p, _TRAIN_FLAGS)
    _add_flags(p, _DATA_FLAGS)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint on the validation split")
    p.add_argument("--checkpoint", required=True)
    _add_flags(p, _MODEL_FLAGS)
    _add_flags(p, _DATA_FLAGS)

    return parser


def _resolve_mapping(args: argparse.Namespace, flag_groups) -> dict[str, str]:
    """Config file values overlaid with explicitly given flags."""
    mapping: dict[str, str] = {}
    if args.config:
        mapping.update(read_config(args.config))
    known = MODEL_CONFIG_KEYS | TRAIN_CONFIG_KEYS | set(DATA_CONFIG_KEYS) | {"seed"}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
    for flags in flag_groups:
        for _, dest, _ in flags:
            value = getattr(args, dest, None)
            if value is not None:
                mapping[dest] = str(value)
    return mapping


def _select(mapping: dict[str, str], keys) -> dict[str, str]:
    return {k: v for k, v in mapping.items() if k in keys}


def _echo(lines: list[str], mapping: dict[str, str]) -> None:
    lines.append("resolved configuration:")
    for key in sorted(mapping):
        lines.append(f"  {key} = {mapping[key]}")


def _emit(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines)
    print(text)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _cmd_count(args) -> int:
    mapping = _resolve_mapping(args, [_MODEL_FLAGS])
    spec = ModelSpec.from_mapping(_select(mapping, MODEL_CONFIG_KEYS))
    lines: list[str] = []
    _echo(lines, spec.to_mapping())
    lines.append(ledger(spec).table())
    _emit(lines, args.out)
    return 0


def _cmd_parity(args) -> int:
    report = cost_parity(args.d, args.conv_k, heads=args.heads, mode=args.mode)
    lines: list[str] = []
    _echo(lines, {"d": str(args.d), "conv_k": str(args.conv_k),
                  "heads": str(args.heads), "mode": args.mode,
                  "convention": CONVENTION})
    lines.append(f"convolution k={args.conv_k}: "
                 f"{report.conv_flops_per_pixel} flops/pixel")
    lines.append(f"{'attention k':>12s} {'flops/pixel':>14s} {'conv/attn':>10s}")
    for k in sorted(report.attention_flops_per_pixel):
        lines.append(f"{k:>12d} {report.attention_flops_per_pixel[k]:>14d} "
                     f"{report.ratio(k):>10.3f}")
    lines.append(f"nearest-cost attention extent: k={report.best_k} "
                 f"(ratio {report.ratio(report.best_k):.3f})")
    if 19 in report.attention_flops_per_pixel:
        lines.append(f"ratio at k=19: {report.ratio(19):.3f}")
    _emit(lines, args.out)
    return 0


def _require_f64(args) -> None:
    if args.precision == "f32":
        raise ValueError("gradient verification requires --precision f64")


def _cmd_gradcheck(args) -> int:
    _require_f64(args)
    start = time.perf_counter()
    suite = gradcheck_suite(seed=args.seed, tolerance=args.tolerance)
    lines = suite.lines()
    _emit(lines, args.out)
    print(f"# time gradcheck {time.perf_counter() - start:.1f}s")
    return 0 if suite.passed else 1


def _cmd_verify(args) -> int:
    _require_f64(args)
    start = time.perf_counter()
    suites = run_all(seed=args.seed)
    lines: list[str] = []
    for suite in suites:
        lines.extend(suite.lines())
    ok = all(s.passed for s in suites)
    lines.append("verify: all suites pass" if ok else "verify: FAILURES above")
    _emit(lines, args.out)
    print(f"# time verify {time.perf_counter() - start:.1f}s")
    return 0 if ok else 1


def _split_train_mappings(args, include_train=True):
    groups = [_MODEL_FLAGS, _DATA_FLAGS] + ([_TRAIN_FLAGS] if include_train else [])
    mapping = _resolve_mapping(args, groups)
    spec = ModelSpec.from_mapping(_select(mapping, MODEL_CONFIG_KEYS))
    source = DatasetSource.from_mapping(_select(mapping, DATA_CONFIG_KEYS))
    train_map = _select(mapping, TRAIN_CONFIG_KEYS)
    if args.seed is not None:
        train_map.setdefault("seed", str(args.seed))
    config = TrainConfig.from_mapping(train_map)
    return spec, source, config


def _cmd_train(args) -> int:
    spec, source, config = _split_train_mappings(args)
    resolved = {}
    resolved.update(spec.to_mapping())
    resolved.update(source.to_mapping())
    resolved.update(config.to_mapping())
    lines: list[str] = []
    _echo(lines, resolved)
    print("\n".join(lines))
    dtype = _PRECISIONS[args.precision or "f32"]
    start = time.perf_counter()
    history = train_loop(spec, source, config, out_dir=args.out,
                         log=lambda msg: print(msg, flush=True),
                         dtype=dtype)
    elapsed = time.perf_counter() - start
    print("\n".join(history.csv_lines()))
    if history.ema_val_acc is not None:
        print(f"ema_val_acc {history.ema_val_acc:.6g}")
    if history.checkpoint_path:
        print(f"checkpoint {history.checkpoint_path}")
        print(f"ema_checkpoint {history.ema_checkpoint_path}")
    print(f"# time train {elapsed:.1f}s")
    return 0


def _cmd_eval(args) -> int:
    spec, source, _ = _split_train_mappings(args, include_train=False)
    resolved = {}
    resolved.update(spec.to_mapping())
    resolved.update(source.to_mapping())
    resolved["checkpoint"] = args.checkpoint
    lines: list[str] = []
    _echo(lines, resolved)
    dtype = _PRECISIONS[args.precision or "f32"]
    model = build_model(spec, seed=args.seed, dtype=dtype)
    load_state_into(model, load_checkpoint(args.checkpoint))
    start = time.perf_counter()
    _, (val_x, val_y) = load_data(source)
    acc = evaluate(model, val_x.astype(dtype), val_y)
    lines.append(f"val_acc {acc:.6g}")
    _emit(lines, args.out)
    print(f"# time eval {time.perf_counter() - start:.1f}s")
    return 0


_COMMANDS = {
    "count": _cmd_count,
    "parity": _cmd_parity,
    "gradcheck": _cmd_gradcheck,
    "verify": _cmd_verify,
    "train": _cmd_train,
    "eval": _cmd_eval,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
