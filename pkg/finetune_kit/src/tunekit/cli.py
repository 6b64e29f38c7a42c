"""Command-line entry point: validate instruction-pair files and run the
desk-scale fine-tune."""

from __future__ import annotations

import argparse
import logging
import sys

from .pairs import validate_pairs
from .train import TuneConfig, run_finetune


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tunekit")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("validate", help="validate an instruction-pair file")
    p.add_argument("pairs", help="instruction-pair JSONL file")

    p = subparsers.add_parser("train", help="fine-tune the tiny base model")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--model-id", help="served model id (defaults to tunekit/<pairs stem>)")
    p.add_argument("--learning-rate", type=float, default=TuneConfig.learning_rate)
    p.add_argument("--epochs", type=int, default=TuneConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TuneConfig.batch_size)
    p.add_argument("--seed", type=int, default=TuneConfig.seed)
    p.add_argument("--max-sequence-bytes", type=int, default=TuneConfig.max_sequence_bytes)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            report = validate_pairs(args.pairs)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(report.to_text())
        return 0 if report.ok else 1

    config = TuneConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        max_sequence_bytes=args.max_sequence_bytes,
    )
    try:
        result = run_finetune(args.pairs, args.out, config, model_id=args.model_id)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    losses = ", ".join(f"{loss:.6f}" for loss in result.epoch_losses)
    print(f"artifact: {result.artifact_dir}")
    print(f"epoch losses: {losses}")
    print(f"descriptor: {result.artifact_dir / 'endpoint.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
