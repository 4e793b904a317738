import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamsan.core import (
    AccuracyParams,
    ConfigError,
    DataError,
    Domain,
    PrivacyParams,
    exact_rank,
    kolmogorov_error,
    predicate_average,
    threshold_eval,
)

from conftest import brute_kolmogorov

small_seq = st.lists(st.integers(0, 7), min_size=1, max_size=6)


def test_threshold_eval_definition():
    assert threshold_eval(3, 5) == 1
    assert threshold_eval(5, 3) == 0
    assert threshold_eval(4, 4) == 1


@given(st.integers(0, 20), st.integers(0, 20), st.integers(0, 5))
def test_threshold_eval_monotone(x, y, bump):
    if threshold_eval(x, y) == 1:
        assert threshold_eval(x, y + bump) == 1


def test_predicate_average_examples():
    assert predicate_average([1, 2, 3], 2) == pytest.approx(2 / 3, abs=1e-12)
    assert predicate_average([7, 7, 7], 0) == 1.0
    assert predicate_average([7, 7, 7], 8) == 0.0


def test_predicate_average_empty():
    with pytest.raises(DataError, match="empty dataset"):
        predicate_average([], 0)


@given(small_seq)
def test_predicate_average_sentinels(data):
    assert predicate_average(data, 0) == 1.0
    assert predicate_average(data, 8) == 0.0  # universe size acts as sentinel


def test_exact_rank_examples():
    assert exact_rank([0, 1, 2, 3], 2) == 2
    assert exact_rank([5, 5, 5], 5) == 0
    assert exact_rank([5, 5, 5], 6) == 3


def test_kolmogorov_examples():
    s = [0, 3, 1, 2]
    assert kolmogorov_error(s, s, 4) == 0.0
    assert kolmogorov_error([0, 0], [1, 1], 2) == 1.0
    assert kolmogorov_error([0, 1], [0, 0], 2) == 0.5


def test_kolmogorov_empty_and_range_errors():
    with pytest.raises(DataError):
        kolmogorov_error([], [0], 2)
    with pytest.raises(DataError):
        kolmogorov_error([0], [5], 2)


@given(small_seq, small_seq)
def test_kolmogorov_matches_brute_force(s, t):
    assert kolmogorov_error(s, t, 8) == pytest.approx(brute_kolmogorov(s, t, 8), abs=1e-12)


@given(small_seq, small_seq)
def test_kolmogorov_symmetric(s, t):
    assert kolmogorov_error(s, t, 8) == pytest.approx(kolmogorov_error(t, s, 8), abs=1e-12)


@given(small_seq)
def test_kolmogorov_zero_on_permutations(s):
    assert kolmogorov_error(s, list(reversed(s)), 8) == 0.0


@settings(max_examples=200)
@given(small_seq, small_seq, small_seq)
def test_kolmogorov_triangle_inequality(a, b, c):
    ab = kolmogorov_error(a, b, 8)
    bc = kolmogorov_error(b, c, 8)
    ac = kolmogorov_error(a, c, 8)
    assert ac <= ab + bc + 1e-12


def test_quantize_boundaries():
    d = Domain(1024, lo=-1.0, hi=3.0)
    assert d.quantize(-1.0) == 0
    assert d.quantize(3.0) == 1023
    assert d.quantize(1.0) == 512


def test_quantize_strict_vs_clamp():
    d = Domain(16, lo=0.0, hi=1.0)
    with pytest.raises(DataError, match="5.0"):
        d.quantize(5.0)
    assert d.quantize(5.0, clamp=True) == 15
    assert d.quantize(-5.0, clamp=True) == 0
    with pytest.raises(DataError):
        d.quantize(float("nan"), clamp=True)


@given(
    st.floats(-10, 10, allow_nan=False),
    st.floats(-10, 10, allow_nan=False),
    st.integers(1, 100),
)
def test_quantize_order_preserving(v1, v2, universe):
    d = Domain(universe, lo=-10.0, hi=10.0)
    lo, hi = min(v1, v2), max(v1, v2)
    assert d.quantize(lo) <= d.quantize(hi)


def test_value_of_is_bucket_lower_bound():
    d = Domain(4, lo=0.0, hi=8.0)
    assert [d.value_of(i) for i in range(4)] == [0.0, 2.0, 4.0, 6.0]
    assert all(d.quantize(d.value_of(i)) == i for i in range(4))
    with pytest.raises(DataError):
        d.value_of(4)


def test_param_validation():
    with pytest.raises(ConfigError):
        Domain(0)
    with pytest.raises(ConfigError):
        Domain(4, lo=1.0, hi=1.0)
    with pytest.raises(ConfigError):
        PrivacyParams(epsilon=0.0)
    with pytest.raises(ConfigError):
        PrivacyParams(epsilon=1.0, delta=1.0)
    with pytest.raises(ConfigError):
        PrivacyParams(epsilon=1.0, delta=-0.1)
    with pytest.raises(ConfigError):
        AccuracyParams(alpha=0.0, beta=0.5)
    with pytest.raises(ConfigError):
        AccuracyParams(alpha=0.5, beta=1.0)


def test_infinite_epsilon_is_noiseless_mode():
    p = PrivacyParams(epsilon=math.inf)
    assert p.noiseless
    assert not PrivacyParams(epsilon=2.0).noiseless
