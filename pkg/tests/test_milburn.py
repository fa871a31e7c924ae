import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import poisson

from opendyn.errors import KrausDefectError
from opendyn.linalg import partial_trace_env, purity, random_density, random_hermitian, trace_distance
from opendyn.milburn import (
    MilburnParams,
    auto_kraus_cutoff,
    binomial_coefficient_CKl,
    completeness_defect,
    g_factor,
    kraus_operator,
    milburn_evolve_closed_form,
    milburn_evolve_kraus,
    milburn_perturbative_reduced,
    milburn_rhs,
    perturbative_kraus,
)
from opendyn.propagator import SeriesConfig, evolve_reduced
from opendyn.sesr import SesrBasis


def liouvillian_evolve(h, rho0, t, theta0):
    """Row-major vectorized generator exponentiated directly."""
    d = h.shape[0]
    eye = np.eye(d)
    comm = np.kron(h, eye) - np.kron(eye, h.T)
    gen = -1j * comm - 0.5 * theta0 * comm @ comm
    return (expm(gen * t) @ rho0.reshape(-1)).reshape(d, d)


def test_closed_form_matches_liouvillian(rng):
    h = random_hermitian(4, rng)
    rho0 = random_density(4, rng)
    got = milburn_evolve_closed_form(rho0, 1.3, h, MilburnParams(0.2))
    assert np.allclose(got, liouvillian_evolve(h, rho0, 1.3, 0.2), atol=1e-12)


def test_closed_form_solves_the_equation(rng):
    h = random_hermitian(3, rng)
    rho0 = random_density(3, rng)
    p = MilburnParams(0.3)
    t, eps = 0.7, 1e-5
    deriv = (milburn_evolve_closed_form(rho0, t + eps, h, p) - milburn_evolve_closed_form(rho0, t - eps, h, p)) / (2 * eps)
    assert np.allclose(deriv, milburn_rhs(milburn_evolve_closed_form(rho0, t, h, p), h, p), atol=1e-8)


def test_g_factor_values():
    assert g_factor(0.0, 3.0, 1.0) == 1.0
    assert g_factor(2.0, 1.0, 0.5) == pytest.approx(np.exp(-2j - 1.0))


def test_kraus_sum_matches_closed_form(rng):
    h = random_hermitian(6, rng)
    rho0 = random_density(6, rng)
    p = MilburnParams(0.4)
    assert trace_distance(milburn_evolve_kraus(rho0, 2.0, h, p), milburn_evolve_closed_form(rho0, 2.0, h, p)) < 1e-11


def test_kraus_operators_are_nearly_complete(rng):
    h = random_hermitian(3, rng)
    p = MilburnParams(0.5)
    t = 1.2
    lam = float(np.max(np.abs(np.linalg.eigvalsh(h))))
    k_max = auto_kraus_cutoff(t, lam, p)
    total = sum(kraus_operator(k, t, h, p).conj().T @ kraus_operator(k, t, h, p) for k in range(k_max + 1))
    defect = completeness_defect(k_max, t, np.linalg.eigvalsh(h), p.theta0)
    assert defect <= p.kraus_cutoff_tol
    assert np.linalg.norm(np.eye(3) - total, 2) <= defect + 1e-14


@pytest.mark.parametrize("k_max,x", [(0, 0.3), (3, 1.0), (10, 2.5)])
def test_completeness_defect_is_poisson_tail(k_max, x):
    # one eigenvalue with theta0 t E^2 = x
    assert completeness_defect(k_max, 1.0, [math.sqrt(x)], 1.0) == pytest.approx(poisson.sf(k_max, x), rel=1e-10)


def test_too_few_kraus_operators_raise(rng):
    h = random_hermitian(3, rng, 2.0)
    with pytest.raises(KrausDefectError):
        milburn_evolve_kraus(random_density(3, rng), 2.0, h, MilburnParams(1.0), k_max=2)


def test_zero_theta_is_unitary(rng):
    h = random_hermitian(4, rng)
    rho0 = random_density(4, rng)
    u = expm(-1.1j * h)
    want = u @ rho0 @ u.conj().T
    assert np.allclose(milburn_evolve_closed_form(rho0, 1.1, h, MilburnParams(0.0)), want, atol=1e-12)
    assert np.allclose(milburn_evolve_kraus(rho0, 1.1, h, MilburnParams(0.0)), want, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_purity_never_increases(seed, theta0):
    rng = np.random.default_rng(seed)
    h = random_hermitian(4, rng)
    rho0 = random_density(4, rng)
    p = MilburnParams(theta0)
    values = [purity(milburn_evolve_closed_form(rho0, t, h, p)) for t in np.linspace(0, 3, 13)]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_coefficient_CKl_values():
    assert binomial_coefficient_CKl(3, 1, [1.0, 2.0]) == pytest.approx(7.0)
    assert binomial_coefficient_CKl(4, 0, [1.5]) == pytest.approx(1.5**4)
    assert binomial_coefficient_CKl(5, 5, [0.1, 0.7, 0.7, 2.0, -1.0, 3.0]) == pytest.approx(1.0)
    # confluent: derivative of x^3 at 2
    assert binomial_coefficient_CKl(3, 1, [2.0, 2.0]) == pytest.approx(12.0)
    with pytest.raises(ValueError):
        binomial_coefficient_CKl(1, 2, [0, 1, 2])


def _perturbative_setup(rng, lam=0.2):
    e = np.array([0.0, 0.6, 1.5, 2.1])
    basis = SesrBasis.from_factors(np.eye(2), np.eye(2), e)
    v = random_hermitian(4, rng)
    v *= lam / np.linalg.norm(v, 2)
    return basis, v


def test_perturbative_kraus_converges_to_exact(rng):
    basis, v = _perturbative_setup(rng)
    p = MilburnParams(0.3)
    h = np.diag(basis.energies) + v
    want = kraus_operator(2, 1.0, h, p)
    errs = [np.linalg.norm(perturbative_kraus(2, 1.0, basis, v, p, l) - want) for l in range(5)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-4


def test_perturbative_kraus_engines_agree(rng):
    basis, v = _perturbative_setup(rng)
    p = MilburnParams(0.3)
    path = perturbative_kraus(1, 0.8, basis, v, p, 3, SeriesConfig(engine="path"))
    block = perturbative_kraus(1, 0.8, basis, v, p, 3, SeriesConfig(engine="block"))
    assert np.allclose(path, block, atol=1e-12)


def test_perturbative_reduced_state(rng):
    basis, v = _perturbative_setup(rng, 0.1)
    rho0 = random_density(4, rng)
    p = MilburnParams(0.2)
    h = np.diag(basis.energies) + v
    want = partial_trace_env(milburn_evolve_closed_form(rho0, 1.5, h, p), 2, 2)
    got = milburn_perturbative_reduced(rho0, 1.5, basis, v, p, (None, 4))
    assert trace_distance(got, want) < 1e-5
    unitary = milburn_perturbative_reduced(rho0, 1.5, basis, v, MilburnParams(0.0), (None, 4))
    assert np.allclose(unitary, evolve_reduced(rho0, 1.5, basis, v, SeriesConfig(max_order_exact=4)), atol=1e-12)


def test_param_validation():
    with pytest.raises(ValueError):
        MilburnParams(-0.1)
    with pytest.raises(ValueError):
        MilburnParams(0.1, kraus_cutoff_tol=0)
