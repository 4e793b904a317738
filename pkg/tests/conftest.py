"""Shared brute-force oracles for the test suite.

These deliberately avoid numpy and the library's own code paths: they
are the independent references the fast implementations are checked
against.
"""

from __future__ import annotations


def brute_average(data, x) -> float:
    """Fraction of items >= x, by direct counting."""
    return sum(1 for y in data if y >= x) / len(data)


def brute_kolmogorov(s, t, universe_size) -> float:
    """Max threshold-average gap by enumerating every threshold."""
    return max(abs(brute_average(s, x) - brute_average(t, x)) for x in range(universe_size))


def brute_rank(data, x) -> int:
    return sum(1 for y in data if y < x)
