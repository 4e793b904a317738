"""Domain model, parameter types, threshold predicates, and exact oracles.

Everything in this module is deterministic and noise-free.  The functions
here define the reference quantities (threshold averages, ranks, sup-CDF
distance) that the private mechanisms in the rest of the package are
measured against, so they are kept simple enough to audit by eye.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    """Invalid parameter or configuration value."""


class DataError(ValueError):
    """Malformed or out-of-contract input data."""


class InvariantViolation(RuntimeError):
    """A structural guarantee the pipeline relies on failed at runtime."""


@dataclass(frozen=True)
class Domain:
    """Finite ordered universe ``{0, ..., universe_size - 1}``.

    Raw real values in ``[lo, hi]`` are mapped onto the universe with a
    uniform grid; all mechanism code operates on the resulting indices.
    """

    universe_size: int
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        if self.universe_size < 1:
            raise ConfigError(f"universe_size must be >= 1, got {self.universe_size}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ConfigError("domain bounds must be finite")
        if not self.lo < self.hi:
            raise ConfigError(f"domain bounds must satisfy lo < hi, got [{self.lo}, {self.hi}]")

    def quantize(self, value: float, clamp: bool = False) -> int:
        """Map a raw value to its grid index: floor(U * (v - lo) / (hi - lo)).

        Monotone in ``value`` and clamped to ``[0, U - 1]`` so that ``hi``
        itself lands in the last bucket.  Out-of-range values raise unless
        ``clamp`` is set.
        """
        if math.isnan(value):
            raise DataError("cannot quantize NaN")
        if not clamp and not (self.lo <= value <= self.hi):
            raise DataError(
                f"value {value!r} outside domain bounds [{self.lo}, {self.hi}]"
            )
        span = self.hi - self.lo
        idx = int(math.floor(self.universe_size * (value - self.lo) / span))
        return min(max(idx, 0), self.universe_size - 1)

    def value_of(self, index: int) -> float:
        """Lower raw bound of bucket ``index`` (the inverse grid map)."""
        if not 0 <= index < self.universe_size:
            raise DataError(f"index {index} outside [0, {self.universe_size})")
        return self.lo + index * (self.hi - self.lo) / self.universe_size


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget.  ``epsilon=inf`` is a noiseless test-only mode."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0 or math.isnan(self.epsilon):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"delta must be in [0, 1), got {self.delta}")

    @property
    def noiseless(self) -> bool:
        return math.isinf(self.epsilon)


@dataclass(frozen=True)
class AccuracyParams:
    """Target error ``alpha`` and failure probability ``beta``."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must be in (0, 1), got {self.beta}")


def ensure_indices(items, universe_size: int, allow_empty: bool = True) -> np.ndarray:
    """Coerce ``items`` to an int64 array and check every entry is in [0, U)."""
    arr = np.asarray(items, dtype=np.int64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        if allow_empty:
            return arr
        raise DataError("empty dataset")
    lo, hi = int(arr.min()), int(arr.max())
    if lo < 0 or hi >= universe_size:
        raise DataError(
            f"items must lie in [0, {universe_size}), found range [{lo}, {hi}]"
        )
    return arr


def threshold_eval(x: int, y: int) -> int:
    """The threshold predicate anchored at ``x``: 1 iff ``x <= y``."""
    return 1 if x <= y else 0


def predicate_average(data, x: int) -> float:
    """Fraction of items that the threshold at ``x`` accepts (items >= x).

    ``x`` may equal the universe size, acting as a virtual sentinel for
    which the average is 0.
    """
    arr = np.asarray(data, dtype=np.int64)
    if arr.size == 0:
        raise DataError("empty dataset")
    return float(np.count_nonzero(arr >= x)) / arr.size


def exact_rank(data, x: int) -> int:
    """Number of items strictly below ``x`` (the non-private rank oracle)."""
    arr = np.asarray(data, dtype=np.int64)
    return int(np.count_nonzero(arr < x))


def normalized_cdf(data, universe_size: int) -> np.ndarray:
    """Empirical CDF over the universe: entry t is the fraction of items <= t."""
    arr = ensure_indices(data, universe_size, allow_empty=False)
    counts = np.bincount(arr, minlength=universe_size)
    return np.cumsum(counts) / arr.size


def kolmogorov_error(s, s_prime, universe_size: int) -> float:
    """Largest threshold-average gap between two sequences.

    Equals the sup-distance between the empirical CDFs, computed in
    O(m + U) with one histogram pass per sequence.
    """
    f = normalized_cdf(s, universe_size)
    g = normalized_cdf(s_prime, universe_size)
    return float(np.max(np.abs(f - g)))
