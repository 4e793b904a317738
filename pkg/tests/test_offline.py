import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamsan.core import AccuracyParams, DataError, Domain, kolmogorov_error
from streamsan.offline import (
    add_tree_noise,
    build_histogram,
    build_tree,
    calibrate_block_size,
    consistent_cdf,
    laplace_scale,
    noisy_prefix,
    prefix_vector,
    sanitize_block,
    synthesize,
    tree_depth,
)
from streamsan.pipeline import skewed_indices
from streamsan.stream import derived_rng


def test_tree_depth():
    assert tree_depth(1) == 1
    assert tree_depth(2) == 2
    assert tree_depth(4) == 3
    assert tree_depth(5) == 4
    assert tree_depth(1024) == 11


def test_laplace_scale():
    assert laplace_scale(4, 1.0) == 3.0
    assert laplace_scale(1024, 2.0) == 5.5
    assert laplace_scale(4, math.inf) == 0.0


def test_build_histogram_examples():
    d4 = Domain(4, 0, 4)
    assert build_histogram([0, 0, 3], d4).tolist() == [2, 0, 0, 1]
    assert build_histogram([], d4).tolist() == [0, 0, 0, 0]
    assert build_histogram([1, 1, 1, 1], Domain(2, 0, 2)).tolist() == [0, 4]


def test_tree_structure_parent_sums_and_padding():
    counts = build_histogram([0, 1, 1, 4], Domain(5, 0, 5))
    tree = build_tree(counts, 5)
    assert tree.depth == 4
    assert tree.padded_size == 8
    assert tree.levels[-1][5:].tolist() == [0, 0, 0]  # padded leaves empty
    for upper, lower in zip(tree.levels, tree.levels[1:]):
        assert np.array_equal(upper, lower.reshape(-1, 2).sum(axis=1))
    assert tree.levels[0][0] == 4


def test_noiseless_prefix_examples():
    tree = build_tree(build_histogram([0, 0, 3], Domain(4, 0, 4)), 4)
    assert noisy_prefix(tree, 3) == 3
    assert noisy_prefix(tree, 0) == 2
    assert noisy_prefix(tree, 4 - 1) == 3  # root covers everything


@given(st.lists(st.integers(0, 10), min_size=1, max_size=30))
def test_noiseless_prefix_equals_exact_count(items):
    tree = build_tree(build_histogram(items, Domain(11, 0, 11)), 11)
    for x in range(11):
        assert noisy_prefix(tree, x) == sum(1 for y in items if y <= x)


def test_prefix_vector_matches_scalar_on_noisy_tree():
    d = Domain(13, 0, 13)
    rng = np.random.default_rng(3)
    tree = build_tree(build_histogram(rng.integers(0, 13, 100), d), 13)
    noisy = add_tree_noise(tree, 0.7, rng)
    vec = prefix_vector(noisy)
    scalars = np.array([noisy_prefix(noisy, x) for x in range(13)])
    assert np.allclose(vec, scalars, atol=1e-9)


def test_add_tree_noise_noiseless_is_identity():
    tree = build_tree(build_histogram([0, 2, 2], Domain(4, 0, 4)), 4)
    noisy = add_tree_noise(tree, math.inf, np.random.default_rng(0))
    for a, b in zip(tree.levels, noisy.levels):
        assert np.array_equal(a, b)


def test_add_tree_noise_deterministic_given_seed():
    tree = build_tree(build_histogram([1, 5, 5, 7], Domain(8, 0, 8)), 8)
    a = add_tree_noise(tree, 1.0, np.random.default_rng(42))
    b = add_tree_noise(tree, 1.0, np.random.default_rng(42))
    for la, lb in zip(a.levels, b.levels):
        assert np.array_equal(la, lb)


def test_laplace_moments():
    # Law-of-large-numbers check on the noise source itself.
    scale = 3.0
    draws = np.random.default_rng(2024).laplace(0.0, scale, size=100_000)
    assert abs(draws.mean()) <= 0.02 * scale
    assert abs(draws.var() - 2 * scale**2) <= 0.1 * (2 * scale**2)


def test_consistent_cdf_examples():
    assert consistent_cdf([1.4, 0.9, 2.2, 2.9], 3).tolist() == [1, 1, 2, 3]
    assert consistent_cdf([-5, 99, 1, 2], 3).tolist() == [0, 3, 3, 3]
    exact = np.array([1, 1, 2, 3])
    assert consistent_cdf(exact.astype(float), 3).tolist() == exact.tolist()


@given(
    st.lists(st.floats(-1e9, 1e9, allow_nan=False), min_size=1, max_size=20),
    st.integers(1, 50),
)
def test_consistent_cdf_invariants(prefixes, n):
    f = consistent_cdf(prefixes, n)
    assert f[-1] == n
    assert np.all(f >= 0) and np.all(f <= n)
    assert np.all(np.diff(f) >= 0)


def test_consistent_cdf_tolerates_nan_and_inf():
    f = consistent_cdf([float("nan"), float("inf"), float("-inf"), 1.0], 5)
    assert f.tolist() == [0, 5, 5, 5]


def test_synthesize_examples():
    assert synthesize(np.array([1, 1, 2, 3])).tolist() == [0, 2, 3]
    assert synthesize(np.array([0, 0, 0, 4])).tolist() == [3, 3, 3, 3]


@given(st.lists(st.integers(0, 6), min_size=1, max_size=12), st.integers(1, 40))
def test_synthesize_cdf_round_trip(steps, n):
    # Build an arbitrary valid CDF, synthesize, and recompute its CDF.
    f = np.minimum(np.cumsum(steps), n).astype(np.int64)
    f[-1] = n
    block = synthesize(f)
    assert block.size == n
    recomputed = np.cumsum(np.bincount(block, minlength=f.size))
    assert np.array_equal(recomputed, f)


def test_sanitize_block_noiseless_round_trip():
    d = Domain(8, 0, 8)
    out = sanitize_block([5, 1, 5, 2], d, math.inf, np.random.default_rng(0))
    assert out.tolist() == [1, 2, 5, 5]


def test_sanitize_block_single_point_domain():
    out = sanitize_block([0], Domain(1, 0, 1), 1.0, np.random.default_rng(0))
    assert out.tolist() == [0]


def test_sanitize_block_empty_errors():
    with pytest.raises(DataError, match="empty"):
        sanitize_block([], Domain(4, 0, 4), 1.0, np.random.default_rng(0))


@given(
    st.lists(st.integers(0, 31), min_size=1, max_size=60),
    st.floats(0.2, 5.0),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=50)
def test_sanitize_block_size_preserved(items, epsilon, seed):
    d = Domain(32, 0, 32)
    out = sanitize_block(items, d, epsilon, np.random.default_rng(seed))
    assert out.size == len(items)
    assert out.min() >= 0 and out.max() < 32
    assert np.all(np.diff(out) >= 0)  # ascending emission


def test_sanitize_block_deterministic_given_seed():
    d = Domain(64, 0, 64)
    items = np.random.default_rng(1).integers(0, 64, 200)
    a = sanitize_block(items, d, 1.0, np.random.default_rng(77))
    b = sanitize_block(items, d, 1.0, np.random.default_rng(77))
    assert np.array_equal(a, b)


def test_sanitize_block_error_concentration():
    # Monte-Carlo oracle: at n=4096, U=8, eps=1 the block error should stay
    # below the inverted calibration bound at beta=0.01 in >=99% of trials.
    d = Domain(8, 0, 8)
    depth = tree_depth(8)
    alpha_offline = 2 * depth**1.5 * math.sqrt(2 * math.log(2 * 8 / 0.01)) / 4096
    data = np.random.default_rng(123).integers(0, 8, size=4096)
    fails = sum(
        kolmogorov_error(data, sanitize_block(data, d, 1.0, derived_rng(5, 9, t)), 8)
        > alpha_offline
        for t in range(500)
    )
    assert fails <= 5  # 1% of 500


def test_calibrate_block_size_reference_value():
    # Independent evaluation of the documented formula.
    acc = AccuracyParams(0.05, 0.05)
    d = Domain(1024, 0, 1)
    expected = math.ceil(2.0 * 11**1.5 * math.sqrt(2 * math.log(2 * 1024 / 0.05)) / 0.05)
    n = calibrate_block_size(acc, 1.0, d)
    assert n == expected == 6726


def test_calibrate_block_size_noiseless_and_homogeneity():
    d = Domain(1024, 0, 1)
    assert calibrate_block_size(AccuracyParams(0.05, 0.05), math.inf, d) == 1
    n1 = calibrate_block_size(AccuracyParams(0.04, 0.05), 1.0, d)
    n2 = calibrate_block_size(AccuracyParams(0.08, 0.05), 1.0, d)
    assert abs(n1 - 2 * n2) <= 2  # doubling alpha halves n up to rounding


def test_calibrate_block_size_monotonicity():
    base = calibrate_block_size(AccuracyParams(0.05, 0.05), 1.0, Domain(256, 0, 1))
    assert calibrate_block_size(AccuracyParams(0.025, 0.05), 1.0, Domain(256, 0, 1)) > base
    assert calibrate_block_size(AccuracyParams(0.05, 0.05), 0.5, Domain(256, 0, 1)) > base
    assert calibrate_block_size(AccuracyParams(0.05, 0.05), 1.0, Domain(4096, 0, 1)) > base


def test_calibrated_size_meets_failure_budget():
    # The formula's promise, checked by simulation: at n_min the failure
    # frequency of {error > alpha} stays within beta plus binomial slack.
    d = Domain(8, 0, 8)
    acc = AccuracyParams(0.1, 0.05)
    n_min = calibrate_block_size(acc, 1.0, d)
    data = skewed_indices(n_min, 8, np.random.default_rng(7))
    trials = 500
    fails = sum(
        kolmogorov_error(data, sanitize_block(data, d, 1.0, derived_rng(6, 9, t)), 8)
        > acc.alpha
        for t in range(trials)
    )
    assert fails / trials <= acc.beta + 3 * math.sqrt(acc.beta / trials)
