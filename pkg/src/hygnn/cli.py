"""``hygnn`` command line: synth, train, eval, infer, gradcheck.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .data import SynthConfig, synth_scene
from .evaluate import evaluate, infer_export
from .gradcheck import grad_check
from .io import DataError, load_dataset, save_scene
from .train import DivergenceError, train, write_loss_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hygnn", description="Hybrid graph network for crowd counting and localization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True, help="number of scenes")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--size", type=int, default=64, help="scene height and width (multiple of 8)")

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--resume", type=Path, help="continue from this checkpoint")

    p = sub.add_parser("eval", help="report MAE / MSE of a checkpoint on a dataset")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("infer", help="export density and localization maps for one image")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", required=True, help="output prefix")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--full", action="store_true", help="also spot-check the full model")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _synth(args) -> int:
    if args.n < 1 or args.size < 8 or args.size % 8:
        print("hygnn synth: --n must be >= 1 and --size a positive multiple of 8", file=sys.stderr)
        return EXIT_USAGE
    args.out.mkdir(parents=True, exist_ok=True)
    config = SynthConfig(height=args.size, width=args.size)
    for i in range(args.n):
        save_scene(synth_scene(args.seed * 1_000_003 + i, config), args.out / f"scene_{i:05d}")
    print(f"wrote {args.n} scenes to {args.out}")
    return EXIT_OK


def _model_keys(config) -> dict:
    """Config entries a resumed run must agree on; run length may change."""
    return {k: v for k, v in config.to_dict().items() if k not in ("iterations", "checkpoint_every")}


def _train(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"hygnn train: {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    dataset = load_dataset(args.data)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and _model_keys(resume.config) != _model_keys(config):
        print("hygnn train: --resume checkpoint was trained with a different config", file=sys.stderr)
        return EXIT_USAGE
    result = train(config, dataset, resume=resume, checkpoint_path=args.out)
    log_path = args.out.with_name(args.out.name + ".loss.tsv")
    write_loss_log(log_path, result.losses)
    last = result.losses[-1] if result.losses else None
    tail = f", final loss {last.total:.6g}" if last else ""
    print(f"trained to step {result.step}{tail}; checkpoint {args.out}, loss log {log_path}")
    return EXIT_OK


def _eval(args) -> int:
    model = load_checkpoint(args.ckpt).build_model()
    result = evaluate(model, load_dataset(args.data))
    print(f"images {len(result.counts)}  MAE {result.mae:.6f}  MSE {result.mse:.6f}")
    return EXIT_OK


def _infer(args) -> int:
    model = load_checkpoint(args.ckpt).build_model()
    out = infer_export(model, args.image, args.out)
    print(f"count {out['count']:.6f}  maps {out['density']} {out['localization']}")
    return EXIT_OK


def _gradcheck(args) -> int:
    report = grad_check(full=args.full, seed=args.seed)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {"synth": _synth, "train": _train, "eval": _eval, "infer": _infer, "gradcheck": _gradcheck}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DataError, CheckpointError, OSError) as exc:
        print(f"hygnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as exc:
        print(f"hygnn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
