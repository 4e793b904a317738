"""Command-line surface.

Subcommands:
  sanitize   read a stream, write its sanitized counterpart + report
  quantiles  full pipeline: sanitize, sketch, answer quantile queries
  eval       Monte-Carlo utility evaluation over repeated seeded runs
  calibrate  block-size calibration table for the offline sanitizer

Exit codes: 0 success, 2 configuration error, 3 data error,
4 invariant violation (the composition check failed).
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from .core import (
    AccuracyParams,
    ConfigError,
    DataError,
    Domain,
    InvariantViolation,
    PrivacyParams,
)
from .pipeline import PipelineConfig, calibrate, eval_utility, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4


def _positive_float(text: str) -> float:
    value = float(text)  # accepts 'inf'
    if math.isnan(value) or value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _block_size(text: str) -> int | None:
    if text == "auto":
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"block size must be >= 1, got {text!r}")
    return value


def _quantile_list(text: str) -> tuple[float, ...]:
    try:
        qs = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad quantile list {text!r}") from None
    if not qs:
        raise argparse.ArgumentTypeError("quantile list is empty")
    return qs


def _csv_col(text: str) -> int | str:
    try:
        return int(text)
    except ValueError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamsan",
        description="Differentially private stream sanitization and quantile estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--lo", type=float, default=0.0, help="lower raw-value bound")
    common.add_argument("--hi", type=float, default=1.0, help="upper raw-value bound")
    common.add_argument("--universe", type=int, default=1024, help="number of grid buckets")
    common.add_argument(
        "--epsilon", type=_positive_float, default=1.0,
        help="per-block privacy budget ('inf' for the noiseless test mode)",
    )
    common.add_argument("--delta", type=float, default=0.0)
    common.add_argument("--alpha", type=float, default=0.05, help="target error")
    common.add_argument("--beta", type=float, default=0.05, help="per-block failure probability")
    common.add_argument("--seed", type=int, default=0)

    run = argparse.ArgumentParser(add_help=False, parents=[common])
    run.add_argument("--input", default=None, help="input file (default: stdin)")
    run.add_argument("--csv-col", type=_csv_col, default=None,
                     help="read this CSV column (index or header name) instead of raw lines")
    run.add_argument("--block-size", type=_block_size, default=None, metavar="N|auto",
                     help="items per sanitized block (default: auto-calibrate)")
    run.add_argument("--subsample-rate", type=float, default=1.0)
    run.add_argument("--partial-block", choices=["strict", "sanitize"], default="strict")
    run.add_argument("--snapshot-every", type=int, default=None, metavar="BLOCKS")
    run.add_argument("--quantiles", type=_quantile_list, default=None, metavar="Q1,Q2,...")
    run.add_argument("--sketch-error", type=float, default=0.01)
    run.add_argument("--confidence-mode", choices=["union", "chernoff"], default="union")
    run.add_argument("--out-stream", default=None, help="write the sanitized stream here")
    run.add_argument("--out-report", default=None, help="write the JSON report here")
    run.add_argument("--lenient", action="store_true",
                     help="skip malformed lines and clamp out-of-range values")
    run.add_argument("--emit-index", action="store_true",
                     help="emit bucket indices instead of de-quantized values")

    sub.add_parser("sanitize", parents=[run], help="sanitize a stream")
    sub.add_parser("quantiles", parents=[run], help="sanitize and answer quantile queries")

    p_eval = sub.add_parser("eval", parents=[run], help="Monte-Carlo utility evaluation")
    p_eval.add_argument("--trials", type=int, default=100)

    p_cal = sub.add_parser("calibrate", parents=[common], help="block-size calibration table")
    p_cal.add_argument("--trials", type=int, default=200)

    return parser


def _pipeline_config(args: argparse.Namespace, require_quantiles: bool) -> PipelineConfig:
    domain = Domain(universe_size=args.universe, lo=args.lo, hi=args.hi)
    quantiles = args.quantiles
    if quantiles is None:
        quantiles = (0.1, 0.25, 0.5, 0.75, 0.9) if require_quantiles else ()
    return PipelineConfig(
        domain=domain,
        privacy=PrivacyParams(epsilon=args.epsilon, delta=args.delta),
        accuracy=AccuracyParams(alpha=args.alpha, beta=args.beta),
        block_size=args.block_size,
        subsample_rate=args.subsample_rate,
        partial_block_policy=args.partial_block,
        seed=args.seed,
        quantiles=quantiles,
        snapshot_every=args.snapshot_every,
        sketch_error=args.sketch_error,
        confidence_mode=args.confidence_mode,
        input_path=args.input,
        csv_column=args.csv_col,
        lenient=args.lenient,
        emit_index=args.emit_index,
        out_stream=args.out_stream,
        out_report=args.out_report,
    )


def _dump(obj: dict) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sanitize":
            cfg = _pipeline_config(args, require_quantiles=False)
            result = run_pipeline(cfg)
            _dump(
                {
                    "stream_error": result.report["stream_error"],
                    "blocks": result.report["counts"]["blocks"],
                    "accounted_privacy": result.report["accounted_privacy"],
                    "out_stream": cfg.out_stream,
                    "out_report": cfg.out_report,
                }
            )
        elif args.command == "quantiles":
            cfg = _pipeline_config(args, require_quantiles=True)
            result = run_pipeline(cfg)
            _dump(
                {
                    "quantile_answers": result.quantile_answers,
                    "snapshots": result.snapshots,
                    "stream_error": result.report["stream_error"],
                    "accounted_privacy": result.report["accounted_privacy"],
                }
            )
        elif args.command == "eval":
            cfg = _pipeline_config(args, require_quantiles=False)
            _dump(eval_utility(cfg, trials=args.trials))
        elif args.command == "calibrate":
            domain = Domain(universe_size=args.universe, lo=args.lo, hi=args.hi)
            accuracy = AccuracyParams(alpha=args.alpha, beta=args.beta)
            table = calibrate(accuracy, args.epsilon, domain, trials=args.trials, seed=args.seed)
            print(f"calibrated block size: {table['block_size']}")
            for row in table["rows"]:
                print(
                    f"  n={row['n']:>10d}  trials={row['trials']:>5d}  "
                    f"failure_rate={row['failure_rate']:.4f}"
                )
            _dump(table)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
