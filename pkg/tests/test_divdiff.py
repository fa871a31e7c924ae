import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from opendyn.divdiff import (
    ExpKernel,
    MilburnKernel,
    PowerKernel,
    divided_difference,
    divided_difference_batch,
    divided_difference_exp,
    divided_difference_reference,
)


def opitz_exp(nodes, t):
    """f[x_0..x_l] is the (0, l) entry of f applied to the bidiagonal matrix of the nodes."""
    n = len(nodes)
    m = np.diag(np.asarray(nodes, dtype=complex)) + np.diag(np.ones(n - 1), 1)
    return expm(-1j * t * m)[0, -1]


def opitz_milburn(nodes, k, t, theta0):
    n = len(nodes)
    m = np.diag(np.asarray(nodes, dtype=complex)) + np.diag(np.ones(n - 1), 1)
    return (np.linalg.matrix_power(m, k) @ expm(-1j * t * m - 0.5 * theta0 * t * m @ m))[0, -1]


def _outside_merge_band(nodes):
    # nodes closer than the merge threshold are snapped together by design
    x = sorted(nodes)
    return all(b - a == 0 or b - a > 1e-6 for a, b in zip(x, x[1:]))


nodes_strategy = st.lists(
    st.one_of(st.floats(-3, 3, allow_nan=False), st.sampled_from([-1.0, 0.0, 0.5, 2.0])),
    min_size=1, max_size=6,
).filter(_outside_merge_band)


def test_order_zero_and_one_closed_forms():
    t = 0.8
    assert divided_difference_exp([0.3], t) == pytest.approx(np.exp(-0.3j * t), abs=1e-15)
    a, b = 0.3, -1.1
    want = (np.exp(-1j * a * t) - np.exp(-1j * b * t)) / (a - b)
    assert divided_difference_exp([a, b], t) == pytest.approx(want, abs=1e-15)
    # confluent order one is the derivative
    assert divided_difference_exp([a, a], t) == pytest.approx(-1j * t * np.exp(-1j * a * t), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(nodes_strategy, st.floats(0.05, 3.0))
def test_matches_matrix_function(nodes, t):
    assert abs(divided_difference_exp(nodes, t) - opitz_exp(nodes, t)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(nodes_strategy, st.floats(0.05, 3.0), st.randoms(use_true_random=False))
def test_permutation_invariance(nodes, t, rnd):
    shuffled = list(nodes)
    rnd.shuffle(shuffled)
    assert abs(divided_difference_exp(nodes, t) - divided_difference_exp(shuffled, t)) < 1e-10


@pytest.mark.parametrize("pattern", [[0, 0], [0, 0, 0], [0, 0, 1], [1, 0, 1, 0], [2, 2, 2, 2, 2]])
def test_confluent_limit_matches_perturbed_nodes(pattern):
    eps, t = 1e-6, 1.3
    base = 0.4 * np.asarray(pattern, dtype=float) - 0.2
    exact = divided_difference_exp(base, t)
    spread = base + eps * np.arange(len(base))
    perturbed = divided_difference_reference(spread, ExpKernel(t)) if len(base) <= 2 else opitz_exp(spread, t)
    scale = t ** (len(base) - 1) / math.factorial(len(base) - 1)
    assert abs(exact - perturbed) < 1e-4 * scale


def test_fully_confluent_is_scaled_derivative():
    x, t = 0.7, 2.0
    for l in range(6):
        want = (-1j * t) ** l / math.factorial(l) * np.exp(-1j * x * t)
        assert divided_difference_exp([x] * (l + 1), t) == pytest.approx(want, abs=1e-13)


def test_reference_formula_agrees_on_well_separated_nodes():
    nodes = [-1.0, 0.2, 1.5, 2.7]
    assert divided_difference_exp(nodes, 0.9) == pytest.approx(
        divided_difference_reference(nodes, ExpKernel(0.9)), abs=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=5).filter(_outside_merge_band),
       st.integers(0, 6))
def test_power_kernel_is_complete_homogeneous(nodes, k):
    # x^k divided differences vanish above order k and equal 1 at order k
    l = len(nodes) - 1
    got = divided_difference(nodes, PowerKernel(k))
    n = len(nodes)
    m = np.diag(np.asarray(nodes, dtype=float)) + np.diag(np.ones(n - 1), 1)
    want = np.linalg.matrix_power(m, k)[0, -1]
    assert abs(got - want) < 1e-9 * max(1.0, 2.0**k)
    if l > k:
        assert abs(got) < 1e-9


@settings(max_examples=40, deadline=None)
@given(nodes_strategy, st.integers(0, 3), st.floats(0.1, 2.0), st.floats(0.0, 0.5))
def test_milburn_kernel_matches_matrix_function(nodes, k, t, theta0):
    got = divided_difference(nodes, MilburnKernel(k, t, theta0, scale=3.0))
    want = opitz_milburn(nodes, k, t, theta0)
    assert abs(got - want) < 1e-9 * max(1.0, abs(want))


def test_batch_equals_scalar(rng):
    x = rng.uniform(-2, 2, size=(30, 4))
    x[::3, 1] = x[::3, 0]
    got = divided_difference_batch(x, ExpKernel(1.1))
    want = [divided_difference_exp(row, 1.1) for row in x]
    assert np.allclose(got, want, atol=1e-13)


def test_large_t_remains_accurate():
    nodes = [0.0, 1e-3, 2e-3, 0.5]
    assert abs(divided_difference_exp(nodes, 40.0) - opitz_exp(nodes, 40.0)) < 1e-9


def test_merge_band_changes_value_by_at_most_threshold_times_derivative():
    t, d = 1.0, 5e-9
    nodes = [0.0, 1.0, d]
    merged = divided_difference_exp(nodes, t)
    assert merged == pytest.approx(divided_difference_exp([0.0, 0.0, 1.0], t), abs=1e-15)
    assert abs(merged - opitz_exp(nodes, t)) < 2 * d * t**3
