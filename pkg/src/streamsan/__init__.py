"""Differentially private stream sanitization with bounded-space quantiles.

The pipeline: chunk a stream into fixed-size blocks, replace each block
with a synthetic one produced by an epsilon-DP offline sanitizer for
threshold queries, and feed the sanitized stream to a non-private
quantile sketch.  Because the output stream is already private, any
downstream consumption (including continual quantile snapshots) is
post-processing.
"""

from .core import (
    AccuracyParams,
    ConfigError,
    DataError,
    Domain,
    InvariantViolation,
    PrivacyParams,
    exact_rank,
    kolmogorov_error,
    predicate_average,
    threshold_eval,
)
from .offline import calibrate_block_size, sanitize_block
from .pipeline import (
    Ingest,
    PipelineConfig,
    PipelineResult,
    calibrate,
    eval_utility,
    run_pipeline,
)
from .sketch import QuantileSketch, capacity_for_rank_error
from .stream import (
    StreamConfig,
    StreamSanitizer,
    account_privacy,
    amplified_privacy,
    confidence_bound,
    minimum_stream_length,
    subsample_stream,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyParams",
    "ConfigError",
    "DataError",
    "Domain",
    "Ingest",
    "InvariantViolation",
    "PipelineConfig",
    "PipelineResult",
    "PrivacyParams",
    "QuantileSketch",
    "StreamConfig",
    "StreamSanitizer",
    "account_privacy",
    "amplified_privacy",
    "calibrate",
    "calibrate_block_size",
    "capacity_for_rank_error",
    "confidence_bound",
    "eval_utility",
    "exact_rank",
    "kolmogorov_error",
    "minimum_stream_length",
    "predicate_average",
    "run_pipeline",
    "sanitize_block",
    "subsample_stream",
    "threshold_eval",
]
