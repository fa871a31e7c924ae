"""
Milburn intrinsic decoherence: ``drho/dt = -i[H, rho] - (theta0 / 2) [H, [H, rho]]``.

The exact solution is a Kraus sum with
``M_k(t) = sqrt((theta0 t)^k / k!) H^k exp(-i H t - theta0 H^2 t / 2)``;
in the eigenbasis of H it is elementwise dephasing
``rho_ab(t) = rho_ab(0) g(E_a - E_b; t)`` with ``g(x; t) = exp(-i x t - theta0 x^2 t / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import gammainc

from .divdiff import MilburnKernel, PowerKernel, divided_difference
from .errors import KrausDefectError
from .linalg import (
    as_operator, commutator, dagger, hermitian_eigendecomposition, hermitian_part,
    partial_trace_env,
)
from .propagator import SeriesConfig, series_term
from .sesr import SesrBasis

DEFAULT_KRAUS_TOL = 1e-12
MAX_KRAUS = 10_000


@dataclass(frozen=True)
class MilburnParams:
    theta0: float = 0.0
    kraus_cutoff_tol: float = DEFAULT_KRAUS_TOL

    def __post_init__(self):
        if not self.theta0 >= 0:
            raise ValueError("theta0 must be nonnegative")
        if not self.kraus_cutoff_tol > 0:
            raise ValueError("kraus_cutoff_tol must be positive")


def g_factor(x, t: float, theta0: float):
    """``g(x; t) = exp(-i x t - theta0 x^2 t / 2)``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-1j * x * t - 0.5 * theta0 * x * x * t)


def milburn_rhs(rho, h, p: MilburnParams) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    h = as_operator(h, "H")
    c = commutator(h, rho)
    return -1j * c - 0.5 * p.theta0 * commutator(h, c)


def completeness_defect(k_max: int, t: float, eigenvalues, theta0: float) -> float:
    """``||I - sum_{k<=K} M_k^dagger M_k||``, a Poisson tail per eigenvalue."""
    if theta0 == 0 or t == 0:
        return 0.0
    x = theta0 * abs(t) * np.asarray(eigenvalues, dtype=float) ** 2
    # P(N > K) for N ~ Poisson(x)
    return float(np.max(gammainc(k_max + 1, x), initial=0.0))


def auto_kraus_cutoff(t: float, lam_max: float, p: MilburnParams) -> int:
    """Smallest K with ``x^(K+1) / (K+1)! < tol`` for ``x = theta0 t lam_max^2``."""
    x = p.theta0 * abs(t) * lam_max**2
    if x == 0:
        return 0
    k, log_term = 0, math.log(x)  # log of x^(k+1)/(k+1)!
    while log_term >= math.log(p.kraus_cutoff_tol):
        k += 1
        log_term += math.log(x) - math.log(k + 1)
        if k > MAX_KRAUS:
            raise KrausDefectError(f"Kraus cutoff would exceed {MAX_KRAUS}; reduce theta0 * t")
    return k


def kraus_operator(k: int, t: float, h, p: MilburnParams) -> np.ndarray:
    w, v = hermitian_eigendecomposition(as_operator(h, "H"))
    return _kraus_from_eig(k, t, w, v, p.theta0)


def _kraus_from_eig(k, t, w, v, theta0):
    if k < 0:
        raise ValueError("Kraus index must be nonnegative")
    x = theta0 * t
    if k > 0 and x == 0:
        return np.zeros((len(w), len(w)), dtype=complex)
    log_pref = 0.5 * (k * math.log(x) - math.lgamma(k + 1)) if k else 0.0
    diag = np.exp(log_pref) * w.astype(complex) ** k * g_factor(w, t, theta0)
    return (v * diag) @ dagger(v)


def milburn_evolve_closed_form(rho0, t: float, h, p: MilburnParams) -> np.ndarray:
    w, v = hermitian_eigendecomposition(as_operator(h, "H"))
    r = dagger(v) @ np.asarray(rho0, dtype=complex) @ v
    r = r * g_factor(w[:, None] - w[None, :], t, p.theta0)
    return hermitian_part(v @ r @ dagger(v))


def milburn_evolve_kraus(rho0, t: float, h, p: MilburnParams, k_max: int | None = None) -> np.ndarray:
    """``sum_{k <= K} M_k rho0 M_k^dagger``.

    Raises
    ------
    KrausDefectError
        If the completeness defect at ``k_max`` exceeds ``p.kraus_cutoff_tol``.
    """
    w, v = hermitian_eigendecomposition(as_operator(h, "H"))
    lam = float(np.max(np.abs(w), initial=0.0))
    if k_max is None:
        k_max = auto_kraus_cutoff(t, lam, p)
    defect = completeness_defect(k_max, t, w, p.theta0)
    if defect > p.kraus_cutoff_tol:
        raise KrausDefectError(
            f"completeness defect {defect:.3g} exceeds {p.kraus_cutoff_tol:.3g}; increase K_max"
        )
    rho0 = np.asarray(rho0, dtype=complex)
    out = np.zeros_like(rho0)
    for k in range(k_max + 1):
        m = _kraus_from_eig(k, t, w, v, p.theta0)
        out += m @ rho0 @ dagger(m)
    return hermitian_part(out)


def binomial_coefficient_CKl(K: int, l: int, energies) -> complex:
    """The ``l``-th divided difference of ``x -> x^K`` over ``l + 1`` path energies."""
    e = np.asarray(energies, dtype=float)
    if l > K:
        raise ValueError("l must not exceed K")
    if e.size != l + 1:
        raise ValueError(f"expected {l + 1} path energies, got {e.size}")
    return divided_difference(e, PowerKernel(K))


def _milburn_matrix_function(k: int, t: float, theta0: float):
    def fn(m):
        g = expm(-1j * t * m - 0.5 * theta0 * t * (m @ m))
        return np.linalg.matrix_power(m, k) @ g

    return fn


def perturbative_kraus(k: int, t: float, basis: SesrBasis, h1_full, p: MilburnParams,
                       l_max: int, cfg: SeriesConfig | None = None) -> np.ndarray:
    """``M_k(t)`` in the SESR truncated at perturbation order ``l_max``."""
    cfg = cfg or SeriesConfig(max_order_exact=max(l_max, 0))
    x = p.theta0 * t
    d = basis.dim
    if k > 0 and x == 0:
        return np.zeros((d, d), dtype=complex)
    pref = math.exp(0.5 * (k * math.log(x) - math.lgamma(k + 1))) if k else 1.0
    scale = float(np.max(np.abs(basis.energies), initial=1.0))
    kernel = MilburnKernel(k, t, p.theta0, scale)
    fn = _milburn_matrix_function(k, t, p.theta0)
    total = np.zeros((d, d), dtype=complex)
    for l in range(l_max + 1):
        total += series_term(l, basis.energies, h1_full, kernel, fn, cfg)
    return pref * total


def milburn_perturbative_reduced(rho0_tot, t: float, basis: SesrBasis, h1_full, p: MilburnParams,
                                 orders: tuple[int | None, int] = (None, 3),
                                 cfg: SeriesConfig | None = None) -> np.ndarray:
    """Reduced state from Kraus operators built perturbatively in the SESR.

    ``orders = (K_max, L_max)``; ``K_max = None`` picks the cutoff from the
    Poisson tail bound with ``max|E| + ||h1||_2`` as the spectral radius.
    """
    k_max, l_max = orders
    h1 = as_operator(h1_full, "h1_full")
    if k_max is None:
        lam = float(np.max(np.abs(basis.energies), initial=0.0)) + float(np.linalg.norm(h1, 2))
        k_max = auto_kraus_cutoff(t, lam, p)
    r0 = basis.to_sesr(np.asarray(rho0_tot, dtype=complex))
    out = np.zeros_like(r0)
    for k in range(k_max + 1):
        m = perturbative_kraus(k, t, basis, h1, p, l_max, cfg)
        out += m @ r0 @ dagger(m)
    return hermitian_part(partial_trace_env(basis.from_sesr(out), basis.dim_s, basis.dim_e))


__all__ = [
    "MilburnParams", "auto_kraus_cutoff", "binomial_coefficient_CKl", "completeness_defect",
    "g_factor", "kraus_operator", "milburn_evolve_closed_form", "milburn_evolve_kraus",
    "milburn_perturbative_reduced", "milburn_rhs", "perturbative_kraus",
]
