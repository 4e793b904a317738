"""Pipeline orchestration: ingest -> subsample -> sanitize -> sketch.

This module owns the evaluation instrumentation.  Alongside the
sanitized stream it computes, with exact oracles, the per-block and
whole-stream threshold errors, checks the composition inequality
(stream error never exceeds the worst block error), accounts the
effective privacy budget, and emits everything as a versioned JSON
report.  A violated composition check aborts the run: it means a
structural assumption broke, not that noise was unlucky.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import (
    AccuracyParams,
    ConfigError,
    DataError,
    Domain,
    InvariantViolation,
    PrivacyParams,
)
from .offline import calibrate_block_size, sanitize_block
from .sketch import (
    QuantileSketch,
    capacity_for_rank_error,
    max_stored_bound,
)
from .stream import (
    CONFIDENCE_CHERNOFF,
    CONFIDENCE_UNION,
    PARTIAL_STRICT,
    StreamConfig,
    StreamSanitizer,
    account_privacy,
    confidence_bound,
    derived_rng,
    minimum_stream_length,
    _KEY_SKETCH,
    _KEY_SUBSAMPLE,
    _KEY_TRIAL,
)

REPORT_VERSION = 1

COMPOSITION_SLACK = 1e-9


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one pipeline run needs, assembled by the CLI or a caller."""

    domain: Domain
    privacy: PrivacyParams
    accuracy: AccuracyParams
    block_size: int | None = None  # None -> auto-calibrate
    subsample_rate: float = 1.0
    partial_block_policy: str = PARTIAL_STRICT
    seed: int = 0
    quantiles: tuple[float, ...] = ()
    snapshot_every: int | None = None
    sketch_error: float = 0.01
    confidence_mode: str = CONFIDENCE_UNION
    input_path: str | None = None
    csv_column: int | str | None = None
    lenient: bool = False
    emit_index: bool = False
    out_stream: str | None = None
    out_report: str | None = None

    def __post_init__(self) -> None:
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ConfigError(f"snapshot_every must be >= 1, got {self.snapshot_every}")
        if self.confidence_mode not in (CONFIDENCE_UNION, CONFIDENCE_CHERNOFF):
            raise ConfigError(f"unknown confidence mode {self.confidence_mode!r}")
        for q in self.quantiles:
            if not 0.0 <= q <= 1.0:
                raise ConfigError(f"quantile {q} outside [0, 1]")
        if not 0.0 < self.sketch_error < 1.0:
            raise ConfigError(f"sketch_error must be in (0, 1), got {self.sketch_error}")

    def resolved_block_size(self) -> int:
        if self.block_size is not None:
            return self.block_size
        return calibrate_block_size(self.accuracy, self.privacy.epsilon, self.domain)


@dataclass
class PipelineResult:
    """Outputs of one run: the report plus the final quantile answers."""

    report: dict
    quantile_answers: list[dict]
    snapshots: list[dict]
    sketch: QuantileSketch | None = None


class Ingest:
    """Stream domain indices out of a text source with bounded memory.

    Newline-delimited decimals by default; with ``csv_column`` set, that
    column of a CSV file (index, or name looked up in the header row).
    Strict mode fails on the first malformed or out-of-range record with
    its line number; lenient mode skips malformed lines, clamps
    out-of-range values, and counts what it skipped.
    """

    def __init__(
        self,
        path: str | Path | None,
        domain: Domain,
        csv_column: int | str | None = None,
        lenient: bool = False,
    ):
        self.path = path
        self.domain = domain
        self.csv_column = csv_column
        self.lenient = lenient
        self.skipped = 0
        self.lines = 0

    def __iter__(self) -> Iterator[int]:
        if self.path is None:
            yield from self._parse(sys.stdin)
        else:
            with open(self.path, "r", newline="") as fh:
                yield from self._parse(fh)

    def _parse(self, fh) -> Iterator[int]:
        if self.csv_column is not None:
            yield from self._parse_csv(fh)
        else:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text:
                    continue
                self.lines += 1
                value = self._decode(text, lineno)
                if value is not None:
                    yield value

    def _parse_csv(self, fh) -> Iterator[int]:
        reader = csv.reader(fh)
        col = self.csv_column
        if isinstance(col, str):
            try:
                header = next(reader)
            except StopIteration:
                return
            if col not in header:
                raise DataError(f"csv column {col!r} not found in header {header}")
            col = header.index(col)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            self.lines += 1
            if col >= len(row):
                if self.lenient:
                    self.skipped += 1
                    continue
                raise DataError(f"line {lineno}: missing column {self.csv_column}")
            value = self._decode(row[col].strip(), lineno)
            if value is not None:
                yield value

    def _decode(self, text: str, lineno: int) -> int | None:
        try:
            value = float(text)
        except ValueError:
            if self.lenient:
                self.skipped += 1
                return None
            raise DataError(f"line {lineno}: malformed value {text!r}") from None
        try:
            return self.domain.quantize(value, clamp=self.lenient)
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None


def skewed_indices(m: int, universe_size: int, rng: np.random.Generator) -> np.ndarray:
    """Adversarially skewed test stream: half the mass on one bucket, rest uniform."""
    heavy = universe_size // 2
    arr = rng.integers(0, universe_size, size=m)
    mask = rng.random(m) < 0.5
    arr[mask] = heavy
    return arr.astype(np.int64)


def _quantile_answer(
    sketch: QuantileSketch, q: float, domain: Domain, cum_counts: np.ndarray, m: int
) -> dict:
    """One quantile answer with its exact rank error against ``cum_counts``.

    The error is the distance from the target rank q*m to the rank
    interval [#items < x, #items <= x] of the answer, normalized by m;
    an answer sitting on a heavy bucket that straddles the target has
    error zero.
    """
    idx = sketch.quantile_query(q)
    lo_rank = float(cum_counts[idx - 1]) if idx > 0 else 0.0
    hi_rank = float(cum_counts[idx])
    target = q * m
    err = max(0.0, lo_rank - target, target - hi_rank) / m if m else 0.0
    return {
        "q": q,
        "index": int(idx),
        "value": domain.value_of(int(idx)),
        "rank_error": err,
    }


def run_pipeline(cfg: PipelineConfig, items=None) -> PipelineResult:
    """Run one end-to-end pass and return its result bundle.

    ``items`` short-circuits ingestion with an in-memory index array
    (used by the evaluation harness); otherwise records stream from
    ``cfg.input_path`` (or stdin) without ever being materialized.
    """
    domain = cfg.domain
    universe = domain.universe_size
    n = cfg.resolved_block_size()
    stream_cfg = StreamConfig(
        block_size=n,
        privacy=cfg.privacy,
        accuracy=cfg.accuracy,
        partial_block_policy=cfg.partial_block_policy,
        subsample_rate=cfg.subsample_rate,
        seed=cfg.seed,
    )
    engine = StreamSanitizer(domain, stream_cfg, track_errors=True)
    sketch: QuantileSketch | None = None
    capacity = capacity_for_rank_error(cfg.sketch_error)
    if cfg.quantiles:
        sketch = QuantileSketch(
            universe, capacity, seed=derived_rng(cfg.seed, _KEY_SKETCH).integers(2**32)
        )

    orig_hist = np.zeros(universe, dtype=np.int64)  # pre-subsampling input
    sub_hist = np.zeros(universe, dtype=np.int64)  # sanitizer input
    out_hist = np.zeros(universe, dtype=np.int64)  # sanitized output
    snapshots: list[dict] = []
    warnings: list[str] = []
    out_fh = open(cfg.out_stream, "w") if cfg.out_stream else None
    ingest: Ingest | None = None

    def handle_block(block: np.ndarray) -> None:
        out_hist[:] += np.bincount(block, minlength=universe)
        if out_fh is not None:
            if cfg.emit_index:
                out_fh.write("\n".join(str(int(v)) for v in block))
            else:
                out_fh.write("\n".join(repr(domain.value_of(int(v))) for v in block))
            out_fh.write("\n")
        if sketch is not None:
            sketch.update_many(block)
            b = engine.blocks_emitted
            if (
                cfg.snapshot_every is not None
                and engine.partial_block_size is None
                and b % cfg.snapshot_every == 0
            ):
                consumed = int(orig_hist.sum())
                cum = np.cumsum(orig_hist)
                snapshots.append(
                    {
                        "block": b,
                        "items_consumed": consumed,
                        "answers": [
                            _quantile_answer(sketch, q, domain, cum, consumed)
                            for q in cfg.quantiles
                        ],
                    }
                )

    try:
        if items is not None:
            arr = np.asarray(items, dtype=np.int64)
            rate = cfg.subsample_rate
            if rate < 1.0:
                keep = derived_rng(cfg.seed, _KEY_SUBSAMPLE).random(arr.size) < rate
                kept_pos = np.flatnonzero(keep)
            else:
                keep = None
                kept_pos = None
            # Segment the original array so each segment ends exactly where
            # a block completes; snapshots then see the true input prefix.
            if keep is None:
                ends = list(range(n, arr.size + 1, n))
            else:
                complete = kept_pos.size // n
                ends = [int(kept_pos[(b + 1) * n - 1]) + 1 for b in range(complete)]
            if not ends or ends[-1] != arr.size:
                ends.append(arr.size)
            prev = 0
            for end in ends:
                seg = arr[prev:end]
                if seg.size == 0:
                    continue
                orig_hist[:] += np.bincount(seg, minlength=universe)
                kept = seg if keep is None else seg[keep[prev:end]]
                prev = end
                if kept.size == 0:
                    continue
                sub_hist[:] += np.bincount(kept, minlength=universe)
                for block in engine.extend(kept):
                    handle_block(block)
        else:
            ingest = Ingest(
                cfg.input_path, domain, csv_column=cfg.csv_column, lenient=cfg.lenient
            )
            rate = cfg.subsample_rate
            sub_rng = derived_rng(cfg.seed, _KEY_SUBSAMPLE) if rate < 1.0 else None
            for item in ingest:
                orig_hist[item] += 1
                if sub_rng is not None and not (sub_rng.random() < rate):
                    continue
                sub_hist[item] += 1
                block = engine.push(item)
                if block is not None:
                    handle_block(block)
        final = engine.finish()
        if final is not None:
            handle_block(final)
    finally:
        if out_fh is not None:
            out_fh.close()

    m_original = int(orig_hist.sum())
    m_sub = int(sub_hist.sum())
    m_out = int(out_hist.sum())
    if m_original == 0:
        raise DataError("empty stream")
    if m_out == 0:
        raise DataError(
            "no sanitized output produced (stream shorter than one block, or "
            "subsampling dropped everything)"
        )

    # Exact stream-level errors from the accumulated histograms.
    def sup_cdf_gap(h1: np.ndarray, n1: int, h2: np.ndarray, n2: int) -> float:
        return float(np.max(np.abs(np.cumsum(h1) / n1 - np.cumsum(h2) / n2)))

    stream_error = sup_cdf_gap(sub_hist, m_sub, out_hist, m_out)
    stream_error_vs_original = sup_cdf_gap(orig_hist, m_original, out_hist, m_out)
    max_block_error = max(engine.block_errors)
    composition_ok = stream_error <= max_block_error + COMPOSITION_SLACK

    if cfg.subsample_rate < 1.0:
        min_len = minimum_stream_length(cfg.accuracy, cfg.subsample_rate)
        if m_original < min_len:
            warnings.append(
                f"stream length {m_original} below the recommended minimum "
                f"{min_len} for subsample rate {cfg.subsample_rate}; sampling "
                "error may exceed alpha"
            )

    accounted = account_privacy(stream_cfg)
    k = engine.blocks_emitted
    union = confidence_bound(k, cfg.accuracy, CONFIDENCE_UNION)
    chernoff = confidence_bound(k, cfg.accuracy, CONFIDENCE_CHERNOFF)
    selected = union if cfg.confidence_mode == CONFIDENCE_UNION else chernoff

    quantile_answers: list[dict] = []
    if sketch is not None:
        cum = np.cumsum(orig_hist)
        quantile_answers = [
            _quantile_answer(sketch, q, domain, cum, m_original) for q in cfg.quantiles
        ]

    partial = None
    if engine.partial_block_size is not None:
        partial = {
            "size": engine.partial_block_size,
            "alpha_degradation": n / engine.partial_block_size,
        }

    report = {
        "report_version": REPORT_VERSION,
        "parameters": {
            "universe_size": universe,
            "lo": domain.lo,
            "hi": domain.hi,
            "epsilon": _json_float(cfg.privacy.epsilon),
            "delta": cfg.privacy.delta,
            "alpha": cfg.accuracy.alpha,
            "beta": cfg.accuracy.beta,
            "block_size": n,
            "subsample_rate": cfg.subsample_rate,
            "partial_block_policy": cfg.partial_block_policy,
            "seed": cfg.seed,
            "quantiles": list(cfg.quantiles),
            "snapshot_every": cfg.snapshot_every,
            "sketch_error": cfg.sketch_error,
            "confidence_mode": cfg.confidence_mode,
            "input_path": str(cfg.input_path) if cfg.input_path else None,
            "csv_column": cfg.csv_column,
            "lenient": cfg.lenient,
        },
        "counts": {
            "items_in": m_original,
            "items_subsampled": m_sub,
            "items_out": m_out,
            "blocks": k,
        },
        "per_block_error": [float(e) for e in engine.block_errors],
        "max_block_error": float(max_block_error),
        "stream_error": stream_error,
        "stream_error_vs_original": stream_error_vs_original,
        "composition_ok": bool(composition_ok),
        "partial_block": partial,
        "accounted_privacy": {
            "epsilon": _json_float(accounted.epsilon),
            "delta": accounted.delta,
        },
        "confidence": {
            "mode": cfg.confidence_mode,
            "error_bound": selected[0],
            "failure_prob": selected[1],
            "union": {"error_bound": union[0], "failure_prob": union[1]},
            "chernoff": {"error_bound": chernoff[0], "failure_prob": chernoff[1]},
        },
        "quantile_answers": quantile_answers,
        "snapshots": snapshots,
        "memory": {
            "peak_buffered_items": engine.peak_buffered,
            "block_size": n,
            "sketch_capacity": capacity if sketch is not None else None,
            "sketch_stored_peak": sketch.stored_peak if sketch is not None else None,
            "sketch_levels": sketch.num_levels if sketch is not None else None,
            "sketch_stored_bound": (
                max_stored_bound(capacity, sketch.total) if sketch is not None else None
            ),
        },
        "ingest": {
            "lines": ingest.lines if ingest is not None else None,
            "skipped_lines": ingest.skipped if ingest is not None else 0,
        },
        "warnings": warnings,
    }

    if cfg.out_report:
        Path(cfg.out_report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    if not composition_ok:
        raise InvariantViolation(
            f"stream error {stream_error} exceeds max per-block error "
            f"{max_block_error} + {COMPOSITION_SLACK}; the disjoint-block "
            "composition argument does not hold for this run"
        )

    return PipelineResult(
        report=report,
        quantile_answers=quantile_answers,
        snapshots=snapshots,
        sketch=sketch,
    )


def _json_float(x: float) -> float | str:
    return "inf" if math.isinf(x) else x


def eval_utility(cfg: PipelineConfig, trials: int, items=None) -> dict:
    """Monte-Carlo harness: rerun the pipeline under fresh seeds.

    Reports the empirical frequency of the stream-level success event
    {stream error <= alpha}, the per-block failure frequency against
    beta, and how often more than a 2*beta fraction of blocks failed
    (the planner's tolerated fraction) against its Hoeffding tail.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if items is None:
        ingest = Ingest(cfg.input_path, cfg.domain, csv_column=cfg.csv_column, lenient=cfg.lenient)
        items = np.fromiter(iter(ingest), dtype=np.int64)
    else:
        items = np.asarray(items, dtype=np.int64)
    if items.size == 0:
        raise DataError("empty stream")

    alpha, beta = cfg.accuracy.alpha, cfg.accuracy.beta
    base = replace(cfg, out_stream=None, out_report=None)
    stream_errors: list[float] = []
    quantile_ok: list[bool] = []
    block_fail_total = 0
    block_total = 0
    trials_over_tolerance = 0
    k_blocks = None
    q_budget = alpha + cfg.sketch_error + 0.01

    for t in range(trials):
        result = run_pipeline(replace(base, seed=cfg.seed + t), items=items)
        rep = result.report
        stream_errors.append(rep["stream_error"])
        errors = rep["per_block_error"]
        k_blocks = rep["counts"]["blocks"]
        fails = sum(1 for e in errors if e > alpha)
        block_fail_total += fails
        block_total += len(errors)
        if fails > 2.0 * beta * len(errors):
            trials_over_tolerance += 1
        if cfg.quantiles:
            quantile_ok.append(
                all(a["rank_error"] <= q_budget for a in rep["quantile_answers"])
                and all(
                    a["rank_error"] <= q_budget
                    for snap in rep["snapshots"]
                    for a in snap["answers"]
                )
            )

    errors_arr = np.asarray(stream_errors)
    out = {
        "trials": trials,
        "blocks_per_trial": k_blocks,
        "alpha": alpha,
        "beta": beta,
        "success_rate": float(np.mean(errors_arr <= alpha)),
        "mean_stream_error": float(errors_arr.mean()),
        "max_stream_error": float(errors_arr.max()),
        "per_block_failure_rate": block_fail_total / block_total if block_total else 0.0,
        "block_failure_budget": beta,
        "over_tolerance_rate": trials_over_tolerance / trials,
        "tolerance_tail": math.exp(-2.0 * (k_blocks or 1) * beta**2),
    }
    if cfg.quantiles:
        out["quantile_error_budget"] = q_budget
        out["quantile_success_rate"] = float(np.mean(quantile_ok))
    return out


def calibrate(
    accuracy: AccuracyParams,
    epsilon: float,
    domain: Domain,
    trials: int = 200,
    seed: int = 0,
) -> dict:
    """Block-size calibration: the formula value plus its Monte-Carlo check.

    Runs the offline sanitizer on skewed blocks at n_min/4, n_min/2,
    n_min, and 2*n_min and tabulates the empirical failure frequency of
    {block error > alpha} at each size.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    n_min = calibrate_block_size(accuracy, epsilon, domain)
    rows = []
    from .core import kolmogorov_error  # local import keeps module deps one-way

    for n in sorted({max(1, n_min // 4), max(1, n_min // 2), n_min, 2 * n_min}):
        fails = 0
        data = skewed_indices(n, domain.universe_size, derived_rng(seed, _KEY_TRIAL, n))
        for t in range(trials):
            rng = derived_rng(seed, _KEY_TRIAL, n, t)
            block = sanitize_block(data, domain, epsilon, rng)
            if kolmogorov_error(data, block, domain.universe_size) > accuracy.alpha:
                fails += 1
        rows.append({"n": n, "trials": trials, "failure_rate": fails / trials})
    return {
        "block_size": n_min,
        "alpha": accuracy.alpha,
        "beta": accuracy.beta,
        "epsilon": _json_float(epsilon),
        "universe_size": domain.universe_size,
        "rows": rows,
    }
