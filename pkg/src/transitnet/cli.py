"""Command-line entry point.

Subcommands:

* ``train``      k-fold cross-validated training of one preset/variant
* ``compare``    the five canonical variants under identical seeds/folds
* ``gradcheck``  finite-difference verification of layers and presets
* ``dump-arch``  plain-text architecture table for a preset
* ``synth``      write the synthetic benchmark to disk (RAWF32 + manifest)

Options may also come from a ``key=value`` config file (``--config``);
explicit flags win.  Exit codes: 0 success, 1 configuration or data
error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, Optional

from .errors import ConfigError, TransitnetError
from .experiment import (
    RunConfig,
    export_synth,
    parse_input_shape,
    preset_with_variant,
    run_compare,
    run_training,
)
from .gradcheck import GRAPH_TOLERANCE, LAYER_TOLERANCE, run_gradcheck
from .presets import build_preset, dump_architecture


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we own exit codes
        raise ConfigError(message)


_RUN_DEFAULTS: Dict[str, object] = {
    "preset": "alexnet_mini",
    "variant": "baseline",
    "data": None,
    "synth": None,
    "k": 5,
    "epochs": 100,
    "lr": 1e-5,
    "momentum": 0.9,
    "batch": 10,
    "seed": 7,
    "out": None,
    "grouped": False,
    "parallel": 1,
    "input": None,
    "no_shuffle": False,
}


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", help="alexnet_mini or zfnet_mini")
    parser.add_argument("--variant",
                        help="baseline|transition|dropout|lrn|transition_nogap; "
                             "combinable with commas, e.g. transition,lrn")
    parser.add_argument("--data", help="manifest CSV path")
    parser.add_argument("--synth", help='synthetic source, e.g. "n=200,size=32"')
    parser.add_argument("--k", type=int, help="fold count")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float, help="learning rate")
    parser.add_argument("--momentum", type=float)
    parser.add_argument("--batch", type=int, help="batch size")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory (all artifacts land here)")
    parser.add_argument("--grouped", action="store_true", default=None,
                        help="keep manifest groups within one fold")
    parser.add_argument("--parallel", type=int,
                        help="fold-level worker processes (default 1, serial)")
    parser.add_argument("--input", help="network input CxHxW for manifest data")
    parser.add_argument("--no-shuffle", action="store_true", default=None,
                        help="disable per-epoch shuffling")
    parser.add_argument("--config", help="key=value config file; explicit flags win")


def _read_config_file(path: str) -> Dict[str, str]:
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"config file {path} does not exist")
    entries: Dict[str, str] = {}
    for line_no, line in enumerate(file_path.read_text(encoding="utf-8").splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        entries[key.strip().replace("-", "_")] = value.strip()
    return entries


def _coerce(key: str, raw: str) -> object:
    default = _RUN_DEFAULTS[key]
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key}={raw!r} is not a boolean")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _resolve_run_config(args: argparse.Namespace, command: str) -> RunConfig:
    merged = dict(_RUN_DEFAULTS)
    if args.config:
        for key, raw in _read_config_file(args.config).items():
            if key not in merged:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                merged[key] = _coerce(key, raw)
            except ValueError:
                raise ConfigError(f"config key {key}={raw!r} has the wrong type") from None
    for key in merged:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return RunConfig(
        command=command,
        preset=merged["preset"],
        variant=merged["variant"],
        data=merged["data"],
        synth=merged["synth"],
        k=merged["k"],
        epochs=merged["epochs"],
        learning_rate=merged["lr"],
        momentum=merged["momentum"],
        batch_size=merged["batch"],
        seed=merged["seed"],
        out=merged["out"],
        grouped=bool(merged["grouped"]),
        parallel=merged["parallel"],
        input_shape=merged["input"],
        shuffle=not merged["no_shuffle"],
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="transitnet", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="cross-validated training run")
    _add_run_flags(train)

    compare = sub.add_parser("compare", help="run all variants under identical folds")
    _add_run_flags(compare)

    grad = sub.add_parser("gradcheck", help="finite-difference verification")
    grad.add_argument("--tolerance", type=float, default=LAYER_TOLERANCE,
                      help="layer tolerance; preset checks run at 10x this "
                           "(floored at 1e-4)")
    grad.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)

    dump = sub.add_parser("dump-arch", help="print the architecture table")
    dump.add_argument("--preset", default="alexnet_mini")
    dump.add_argument("--variant", default="baseline")
    dump.add_argument("--input", default="3x64x64", help="per-sample CxHxW")
    dump.add_argument("--classes", type=int, default=2)

    synth = sub.add_parser("synth", help="export the synthetic benchmark")
    synth.add_argument("--n", type=int, default=100, help="samples per class")
    synth.add_argument("--size", type=int, default=32)
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("--out", required=True)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            cfg = _resolve_run_config(args, "train")
            results = run_training(cfg)
            for r in results:
                print(f"fold {r.fold}: accuracy={r.accuracy:.4f} auc={r.auc:.4f}")
            mean_acc = sum(r.accuracy for r in results) / len(results)
            print(f"mean accuracy {mean_acc:.4f}; artifacts in {cfg.out}")
            return 0
        if args.command == "compare":
            cfg = _resolve_run_config(args, "compare")
            rows = run_compare(cfg)
            for variant, acc, auc in rows:
                print(f"{variant:<18} mean_accuracy={acc:.4f} mean_auc={auc:.4f}")
            print(f"artifacts in {cfg.out}")
            return 0
        if args.command == "gradcheck":
            graph_tol = max(10 * args.tolerance, GRAPH_TOLERANCE)
            ok = run_gradcheck(args.tolerance, graph_tol, corrupt=args.corrupt)
            return 0 if ok else 2
        if args.command == "dump-arch":
            name = preset_with_variant(args.preset, args.variant)
            g = build_preset(name, args.classes, parse_input_shape(args.input))
            print(dump_architecture(g))
            return 0
        if args.command == "synth":
            manifest = export_synth(args.n, args.size, args.seed, args.out)
            print(f"wrote {manifest}")
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except TransitnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:  # unwritable output directory, disk errors
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
