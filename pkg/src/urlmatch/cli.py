"""``urlmatch`` command line: gen, train, eval, sweep.

Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import NumericError, ValidationError
from .experiment import (
    EVAL_HEADER,
    SWEEP_HEADER,
    evaluate,
    format_csv,
    log_line,
    parse_values,
    sweep,
    train,
    write_training_outputs,
)
from .params import load_checkpoint
from .synth import SynthDataset, load_dataset, save_dataset

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="urlmatch", description="Partial multi-graph matching through universe embeddings.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=_seed, help="overrides the data and training seeds")

    p = sub.add_parser("gen", help="generate a synthetic dataset file")
    common(p)
    p.add_argument("--out", required=True, help="dataset file to write")

    p = sub.add_parser("train", help="train on a dataset and write checkpoints")
    common(p)
    p.add_argument("--data", help="dataset file (generated from the config when omitted)")
    p.add_argument("--out", required=True, help="output directory for train.log, final.urlm, best.urlm")

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    common(p)
    p.add_argument("--data", help="dataset file (generated from the config when omitted)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("union", "intersection"))
    p.add_argument("--baseline", action="store_true", help="also score the thresholded pairwise baseline")
    p.add_argument("--centroid-mode", choices=("paper", "occurrence"),
                   help="replace the learned universe by centroids of encoded training nodes")
    p.add_argument("--out", help="CSV file (stdout when omitted)")

    p = sub.add_parser("sweep", help="regenerate, train and evaluate along one axis")
    common(p)
    p.add_argument("--axis", required=True, choices=("visibility", "size"))
    p.add_argument("--values", help="comma-separated values (axis defaults when omitted)")
    p.add_argument("--centroid-mode", choices=("paper", "occurrence"))
    p.add_argument("--out", help="CSV file (stdout when omitted)")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "centroid_mode", None):
        changes["centroid_mode"] = args.centroid_mode
    if changes:
        cfg = replace(cfg, eval=replace(cfg.eval, **changes))
    return cfg


def _dataset(args, cfg: ExperimentConfig) -> SynthDataset:
    return load_dataset(args.data) if args.data else SynthDataset(cfg.synth)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def cmd_gen(args) -> None:
    cfg = _config(args)
    save_dataset(SynthDataset(cfg.synth), args.out)


def cmd_train(args) -> None:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train.log", "w", encoding="utf-8") as fh:
        def log(rec):
            line = log_line(rec)
            print(line, flush=True)
            fh.write(line + "\n")
            fh.flush()

        result = train(ds, cfg, log=log)
    write_training_outputs(result, out)


def cmd_eval(args) -> None:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    store = load_checkpoint(args.checkpoint)
    rows = evaluate(ds, store, cfg, baseline=args.baseline)
    _emit(format_csv(rows, EVAL_HEADER), args.out)


def cmd_sweep(args) -> None:
    cfg = _config(args)
    values = parse_values(args.axis, args.values)
    rows = sweep(cfg, args.axis, values, log=lambda rec: print(log_line(rec), file=sys.stderr, flush=True))
    _emit(format_csv(rows, SWEEP_HEADER), args.out)


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
