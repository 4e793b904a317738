"""Bounded-space streaming quantile summary (non-private).

Compactor scheme: level h stores items that each stand for 2**h stream
items.  When a level overflows it is sorted and every other element
(random even/odd offset) moves up one level at doubled weight; on an odd
count one element simply stays behind, so the total stored weight equals
the number of inserted items after every update, exactly.

The per-level capacity is uniform.  The capacity -> rank-error mapping
is calibrated empirically (see ``capacity_for_rank_error``); the sketch
makes no claim to optimal constants.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .core import ConfigError, DataError

MAGIC = b"QSK1"

# Empirical calibration, Monte-Carlo against the exact rank oracle:
# capacity ceil(C / alpha) keeps the max rank error below alpha * N with
# comfortable margin at desk scale (N up to 10**6).
_CAPACITY_CONSTANT = 6.0


def capacity_for_rank_error(alpha: float) -> int:
    """Per-level capacity targeting a max rank error of alpha * N."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    return int(math.ceil(_CAPACITY_CONSTANT / alpha))


def level_count_bound(capacity: int, total: int) -> int:
    """Most levels a sketch can have grown after ``total`` insertions.

    Level h + 1 is created only once level h has overflowed, which takes
    more than capacity items of weight 2**h each.
    """
    if total <= capacity:
        return 1
    return int(math.floor(math.log2(total / (capacity + 1)))) + 2


def max_stored_bound(capacity: int, total: int) -> int:
    """Documented space bound: every level holds at most capacity + 1 items."""
    return (capacity + 1) * level_count_bound(capacity, total)


class QuantileSketch:
    """Mergeable rank/quantile summary over domain indices [0, U)."""

    def __init__(self, universe_size: int, capacity: int, seed: int = 0):
        if universe_size < 1:
            raise ConfigError(f"universe_size must be >= 1, got {universe_size}")
        if capacity < 2:
            raise ConfigError(f"capacity must be >= 2, got {capacity}")
        self.universe_size = universe_size
        self.capacity = capacity
        self.total = 0
        self.stored_peak = 0
        self._rng = np.random.default_rng(seed)
        self._buffers: list[np.ndarray] = [np.empty(capacity + 1, dtype=np.int64)]
        self._fills: list[int] = [0]

    @property
    def num_levels(self) -> int:
        return len(self._buffers)

    @property
    def stored_items(self) -> int:
        return sum(self._fills)

    def update(self, x: int) -> None:
        """Insert one item."""
        self.update_many(np.asarray([x], dtype=np.int64))

    def update_many(self, items) -> None:
        """Insert a chunk of items (equivalent to repeated ``update``)."""
        arr = np.asarray(items, dtype=np.int64)
        if arr.size == 0:
            return
        if arr.min() < 0 or arr.max() >= self.universe_size:
            raise DataError(f"items must lie in [0, {self.universe_size})")
        self.total += arr.size
        self._insert(0, arr)

    def _insert(self, level: int, arr: np.ndarray) -> None:
        while level >= self.num_levels:
            self._buffers.append(np.empty(self.capacity + 1, dtype=np.int64))
            self._fills.append(0)
        buf, cap = self._buffers[level], self.capacity
        pos = 0
        while pos < arr.size:
            fill = self._fills[level]
            take = min(cap + 1 - fill, arr.size - pos)
            buf[fill : fill + take] = arr[pos : pos + take]
            self._fills[level] = fill + take
            pos += take
            self.stored_peak = max(self.stored_peak, self.stored_items)
            if self._fills[level] > cap:
                promoted = self._compact(level)
                self._insert(level + 1, promoted)

    def _compact(self, level: int) -> np.ndarray:
        """Halve a full level: keep alternate elements at doubled weight.

        On an odd count the largest element stays behind at its original
        weight, which keeps the stored weight exactly conserved.
        """
        fill = self._fills[level]
        items = np.sort(self._buffers[level][:fill])
        if fill % 2 == 1:
            retained, items = items[-1], items[:-1]
            self._buffers[level][0] = retained
            self._fills[level] = 1
        else:
            self._fills[level] = 0
        offset = int(self._rng.integers(0, 2))
        return items[offset::2].copy()

    def merge(self, other: "QuantileSketch") -> "QuantileSketch":
        """Absorb ``other`` into this sketch; error guarantees are preserved."""
        if not isinstance(other, QuantileSketch):
            raise ConfigError("can only merge with another QuantileSketch")
        if other.universe_size != self.universe_size:
            raise ConfigError(
                f"universe mismatch: {self.universe_size} vs {other.universe_size}"
            )
        if other.capacity != self.capacity:
            raise ConfigError(f"capacity mismatch: {self.capacity} vs {other.capacity}")
        self.total += other.total
        for level in range(other.num_levels):
            fill = other._fills[level]
            if fill:
                self._insert(level, other._buffers[level][:fill].copy())
        return self

    def _gathered(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored items sorted ascending, with their weights."""
        parts, weights = [], []
        for level in range(self.num_levels):
            fill = self._fills[level]
            if fill:
                parts.append(self._buffers[level][:fill])
                weights.append(np.full(fill, 1 << level, dtype=np.int64))
        items = np.concatenate(parts)
        w = np.concatenate(weights)
        order = np.argsort(items, kind="stable")
        return items[order], w[order]

    def rank_estimates(self, xs) -> np.ndarray:
        """Estimated number of stream items strictly below each query point."""
        if self.total == 0:
            raise DataError("empty sketch")
        qs = np.asarray(xs, dtype=np.int64)
        if qs.size and (qs.min() < 0 or qs.max() > self.universe_size):
            raise DataError(
                f"query points must lie in [0, {self.universe_size}]"
            )
        items, w = self._gathered()
        cum = np.concatenate(([0], np.cumsum(w)))
        return cum[np.searchsorted(items, qs, side="left")]

    def rank_estimate(self, x: int) -> int:
        """Estimated rank of one query point (items strictly below ``x``)."""
        return int(self.rank_estimates(np.asarray([x]))[0])

    def quantile_query(self, q: float) -> int:
        """Smallest stored item whose estimated inclusive rank reaches q * N."""
        if self.total == 0:
            raise DataError("empty sketch")
        if not 0.0 <= q <= 1.0:
            raise ConfigError(f"q must be in [0, 1], got {q}")
        items, w = self._gathered()
        cum = np.cumsum(w)
        idx = int(np.searchsorted(cum, q * self.total, side="left"))
        return int(items[min(idx, items.size - 1)])

    def to_bytes(self) -> bytes:
        """Versioned binary snapshot: magic 'QSK1', little-endian integers."""
        parts = [
            MAGIC,
            struct.pack("<QQQI", self.universe_size, self.capacity, self.total, self.num_levels),
        ]
        for level in range(self.num_levels):
            fill = self._fills[level]
            parts.append(struct.pack("<I", fill))
            parts.append(self._buffers[level][:fill].astype("<u8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes, seed: int = 0) -> "QuantileSketch":
        """Reconstruct a finished sketch.  Compaction randomness after the
        load comes from ``seed``; the snapshot itself carries no RNG state.
        """
        if blob[:4] != MAGIC:
            raise DataError("not a quantile sketch blob (bad magic)")
        off = 4
        universe, capacity, total, levels = struct.unpack_from("<QQQI", blob, off)
        off += struct.calcsize("<QQQI")
        sk = cls(int(universe), int(capacity), seed=seed)
        stored = 0
        for level in range(levels):
            (fill,) = struct.unpack_from("<I", blob, off)
            off += 4
            items = np.frombuffer(blob, dtype="<u8", count=fill, offset=off).astype(np.int64)
            off += 8 * fill
            if fill > capacity + 1:
                raise DataError("corrupt sketch blob: level overflows capacity")
            while level >= sk.num_levels:
                sk._buffers.append(np.empty(int(capacity) + 1, dtype=np.int64))
                sk._fills.append(0)
            sk._buffers[level][:fill] = items
            sk._fills[level] = fill
            stored += fill
        if off != len(blob):
            raise DataError("corrupt sketch blob: trailing bytes")
        sk.total = int(total)
        sk.stored_peak = stored
        return sk
