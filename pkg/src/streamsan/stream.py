"""Streaming sanitizer: block-chunking engine plus stream-level planners.

The engine buffers n items at a time and hands each full buffer to the
offline block sanitizer, so at any moment it retains at most n input
items.  Because consecutive blocks are disjoint portions of the stream,
the per-block privacy budget is also the whole-stream budget (parallel
composition); subsampling the stream first buys a strictly smaller
effective epsilon at a quantified utility cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .core import (
    AccuracyParams,
    ConfigError,
    DataError,
    Domain,
    PrivacyParams,
    kolmogorov_error,
)
from .offline import sanitize_block

PARTIAL_STRICT = "strict"
PARTIAL_SANITIZE = "sanitize"

CONFIDENCE_UNION = "union"
CONFIDENCE_CHERNOFF = "chernoff"

# Spawn-key prefixes so each consumer of the run seed gets an independent
# substream regardless of how many draws the others make.
_KEY_BLOCK = 1
_KEY_SUBSAMPLE = 2
_KEY_SKETCH = 3
_KEY_TRIAL = 4


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for substream ``key`` of run ``seed``."""
    entropy = int(seed) & (2**64 - 1)
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=tuple(key)))


@dataclass(frozen=True)
class StreamConfig:
    """Parameters of one sanitizer run over a stream."""

    block_size: int
    privacy: PrivacyParams
    accuracy: AccuracyParams
    partial_block_policy: str = PARTIAL_STRICT
    subsample_rate: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.partial_block_policy not in (PARTIAL_STRICT, PARTIAL_SANITIZE):
            raise ConfigError(
                f"partial_block_policy must be '{PARTIAL_STRICT}' or "
                f"'{PARTIAL_SANITIZE}', got {self.partial_block_policy!r}"
            )
        if not 0.0 < self.subsample_rate <= 1.0:
            raise ConfigError(
                f"subsample_rate must be in (0, 1], got {self.subsample_rate}"
            )


class StreamSanitizer:
    """Consume a stream, emit one sanitized block per n consumed items.

    Each block gets its own generator derived from (seed, block index),
    so with a fixed seed a change to input item i can only alter the
    emitted block floor(i / n); every other block is bit-identical.

    With ``track_errors`` the engine also logs the exact threshold-error
    of each emitted block against its source buffer (evaluation only;
    the log holds one float per block, not the data).
    """

    def __init__(self, domain: Domain, config: StreamConfig, track_errors: bool = False):
        self.domain = domain
        self.config = config
        self.track_errors = track_errors
        self.blocks_emitted = 0
        self.items_consumed = 0
        self.peak_buffered = 0
        self.partial_block_size: int | None = None
        self.block_errors: list[float] = []
        self._buffer = np.empty(config.block_size, dtype=np.int64)
        self._fill = 0
        self._finished = False

    @property
    def buffered(self) -> int:
        return self._fill

    def push(self, item: int) -> np.ndarray | None:
        """Append one item; returns the sanitized block when the buffer fills."""
        if self._finished:
            raise DataError("sanitizer already finished")
        if not 0 <= item < self.domain.universe_size:
            raise DataError(
                f"item {item} outside [0, {self.domain.universe_size})"
            )
        self._buffer[self._fill] = item
        self._fill += 1
        self.items_consumed += 1
        self.peak_buffered = max(self.peak_buffered, self._fill)
        if self._fill == self.config.block_size:
            return self._emit()
        return None

    def extend(self, items) -> list[np.ndarray]:
        """Push a chunk of items at once; returns the blocks emitted."""
        if self._finished:
            raise DataError("sanitizer already finished")
        arr = np.asarray(items, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.domain.universe_size):
            raise DataError(
                f"items must lie in [0, {self.domain.universe_size})"
            )
        out: list[np.ndarray] = []
        n = self.config.block_size
        pos = 0
        while pos < arr.size:
            take = min(n - self._fill, arr.size - pos)
            self._buffer[self._fill : self._fill + take] = arr[pos : pos + take]
            self._fill += take
            pos += take
            self.items_consumed += take
            self.peak_buffered = max(self.peak_buffered, self._fill)
            if self._fill == n:
                out.append(self._emit())
        return out

    def finish(self) -> np.ndarray | None:
        """Flush the residual buffer according to the partial-block policy.

        Strict: a non-empty residue is an error (the stream length must be
        a multiple of the block size).  Sanitize: the residue of size
        n' < n goes through the same mechanism; its error guarantee is
        degraded by the factor n / n', which callers must surface.
        """
        if self._finished:
            return None
        self._finished = True
        if self._fill == 0:
            return None
        if self.config.partial_block_policy == PARTIAL_STRICT:
            raise DataError(
                "stream length not a multiple of block size "
                f"({self._fill} items left over; block size {self.config.block_size})"
            )
        self.partial_block_size = self._fill
        return self._emit()

    def _emit(self) -> np.ndarray:
        source = self._buffer[: self._fill]
        rng = derived_rng(self.config.seed, _KEY_BLOCK, self.blocks_emitted)
        block = sanitize_block(source, self.domain, self.config.privacy.epsilon, rng)
        if self.track_errors:
            self.block_errors.append(
                kolmogorov_error(source, block, self.domain.universe_size)
            )
        self._fill = 0
        self.blocks_emitted += 1
        return block


def subsample_stream(stream: Iterable[int], rate: float, rng: np.random.Generator) -> Iterator[int]:
    """Keep each element independently with probability ``rate``, order preserved."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"rate must be in [0, 1], got {rate}")
    if rate == 1.0:
        yield from stream
        return
    if rate == 0.0:
        for _ in stream:
            pass
        return
    for item in stream:
        if rng.random() < rate:
            yield item


def amplified_privacy(epsilon0: float, delta0: float, rate: float) -> PrivacyParams:
    """Effective budget after running an (epsilon0, delta0) mechanism on a
    Bernoulli(rate) subsample:

        epsilon' = ln(1 + rate * (e**epsilon0 - 1)),  delta' = rate * delta0.
    """
    if not epsilon0 > 0:
        raise ConfigError(f"epsilon0 must be positive, got {epsilon0}")
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"rate must be in (0, 1], got {rate}")
    if math.isinf(epsilon0):
        return PrivacyParams(epsilon=math.inf, delta=rate * delta0)
    eps = math.log1p(rate * math.expm1(epsilon0))
    return PrivacyParams(epsilon=eps, delta=rate * delta0)


def confidence_bound(
    num_blocks: int, accuracy: AccuracyParams, mode: str = CONFIDENCE_UNION
) -> tuple[float, float]:
    """(error bound, failure probability) for a k-block run.

    Union mode charges every block: the stream keeps the per-block error
    alpha but fails with probability up to k * beta.  Chernoff mode keeps
    the failure probability k-independent by tolerating a 2*beta fraction
    of failed blocks, costing alpha + 2*beta error; the tail is the
    Hoeffding bound exp(-2 k beta^2) on that fraction.
    """
    if num_blocks < 1:
        raise ConfigError(f"num_blocks must be >= 1, got {num_blocks}")
    if mode == CONFIDENCE_UNION:
        return accuracy.alpha, min(1.0, num_blocks * accuracy.beta)
    if mode == CONFIDENCE_CHERNOFF:
        return (
            accuracy.alpha + 2.0 * accuracy.beta,
            math.exp(-2.0 * num_blocks * accuracy.beta**2),
        )
    raise ConfigError(f"unknown confidence mode {mode!r}")


def minimum_stream_length(accuracy: AccuracyParams, rate: float, constant: float = 8.0) -> int:
    """Stream length below which Bernoulli(rate) sampling error can exceed alpha.

    Returns ceil(constant / (alpha^2 * rate)); used to warn when
    subsampling is enabled on short streams.
    """
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"rate must be in (0, 1], got {rate}")
    return math.ceil(constant / (accuracy.alpha**2 * rate))


def account_privacy(config: StreamConfig) -> PrivacyParams:
    """Whole-stream privacy of a run.

    Blocks are disjoint, so without subsampling the block budget is the
    stream budget no matter how many blocks are emitted.  With rate < 1
    the budget additionally shrinks by amplification.
    """
    if config.subsample_rate == 1.0:
        return config.privacy
    return amplified_privacy(
        config.privacy.epsilon, config.privacy.delta, config.subsample_rate
    )
