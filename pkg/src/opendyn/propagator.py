"""
Series terms of the time-evolution operator in the SESR.

With H_tot0 diagonal (energies E) and perturbation matrix V in the SESR,

    exp(-i (H_tot0 + V) t) = sum_l A_l(t),
    A_l(t)[a, b] = sum over label paths a = x_0 -> x_1 -> ... -> x_l = b of
                   exp(-i x t)[E_x0, ..., E_xl] * V[x_0, x_1] ... V[x_{l-1}, x_l],

where ``f[...]`` is a divided difference.  ``A_l(-t) = A_l(t)^dagger`` for real
energies and hermitian V.

The improved terms A_I0..A_I3 replace the phases by ``exp(-i E~ t)`` with
improved energies E~ and keep the unperturbed denominators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .divdiff import CONFLUENCE_REL_TOL, ExpKernel, divided_difference_batch
from .errors import DegenerateDenominatorError, PathBudgetError, UnsupportedOrderError
from .linalg import as_operator, check_budget, dagger, hermitian_part, partial_trace_env
from .sesr import PerturbationData, SesrBasis, degeneracy_mask, improved_energies

MAX_EXACT_ORDER = 6
STRUCTURAL_ZERO = 1e-14
DEFAULT_PATH_BUDGET = 2**25
AUTO_BLOCK_THRESHOLD = 2**18
_CHUNK = 2**18


@dataclass(frozen=True)
class SeriesConfig:
    """Truncation knobs for the series solutions.

    ``engine`` selects how exact terms are summed: ``"path"`` enumerates label
    paths, ``"block"`` reads them off the exponential of a block-bidiagonal
    matrix, ``"auto"`` enumerates unless the path count is large.
    """

    max_order_exact: int = 4
    improved: bool = False
    improved_energy_order: int = 5
    path_budget: int = DEFAULT_PATH_BUDGET
    confluence_tol: float | None = None
    engine: str = "auto"

    def __post_init__(self):
        if not 0 <= self.max_order_exact <= MAX_EXACT_ORDER:
            raise UnsupportedOrderError(f"max_order_exact must be in [0, {MAX_EXACT_ORDER}]")
        if not 1 <= self.improved_energy_order <= 5:
            raise UnsupportedOrderError("improved_energy_order must be in [1, 5]")
        if self.path_budget < 1:
            raise ValueError("path_budget must be positive")
        if self.engine not in ("auto", "path", "block"):
            raise ValueError(f"unknown engine {self.engine!r}")


@dataclass(frozen=True)
class PropagatorTerm:
    order: int
    matrix: np.ndarray
    time: float
    improved: bool = False


def structural_pattern(h1) -> np.ndarray:
    return np.abs(h1) >= STRUCTURAL_ZERO


def count_paths(h1, l: int) -> float:
    """Number of label paths of length ``l`` through nonzero elements of ``h1``."""
    if l == 0:
        return float(h1.shape[0])
    nz = structural_pattern(h1).astype(float)
    vec = np.ones(h1.shape[0])
    for _ in range(l):
        vec = nz @ vec
    return float(vec.sum())


def _confluence_tol(energies, cfg: SeriesConfig) -> float:
    if cfg.confluence_tol is not None:
        return float(cfg.confluence_tol)
    return CONFLUENCE_REL_TOL * float(np.max(np.abs(energies), initial=0.0))


def _path_sum(l: int, energies, h1, kernel, tol: float) -> np.ndarray:
    d = h1.shape[0]
    nz = structural_pattern(h1)
    out = np.zeros((d, d), dtype=complex)
    for a in range(d):
        nodes = np.array([[a]], dtype=np.int32)
        weights = np.ones(1, dtype=complex)
        for _ in range(l):
            src = nodes[:, -1]
            rows, nbr = np.nonzero(nz[src])
            if rows.size == 0:
                break
            weights = weights[rows] * h1[src[rows], nbr]
            nodes = np.column_stack([nodes[rows], nbr.astype(np.int32)])
        else:
            for lo in range(0, nodes.shape[0], _CHUNK):
                blk = nodes[lo : lo + _CHUNK]
                dd = divided_difference_batch(energies[blk], kernel, np.full(blk.shape[0], tol))
                contrib = dd * weights[lo : lo + _CHUNK]
                out[a] += np.bincount(blk[:, -1], weights=contrib.real, minlength=d)
                out[a] += 1j * np.bincount(blk[:, -1], weights=contrib.imag, minlength=d)
    return out


def _block_matrix(l: int, energies, h1) -> np.ndarray:
    d = h1.shape[0]
    n = (l + 1) * d
    check_budget(n)
    m = np.zeros((n, n), dtype=complex)
    for j in range(l + 1):
        m[j * d : (j + 1) * d, j * d : (j + 1) * d] = np.diag(energies)
        if j < l:
            m[j * d : (j + 1) * d, (j + 1) * d : (j + 2) * d] = h1
    return m


def _block_sum(l: int, energies, h1, t: float) -> np.ndarray:
    """Top-right block of ``exp(-i t M)`` with E on the diagonal and ``h1`` on the superdiagonal."""
    d = h1.shape[0]
    shift = 0.5 * (float(np.max(energies)) + float(np.min(energies)))
    big = expm(-1j * t * _block_matrix(l, energies - shift, h1))
    return np.exp(-1j * shift * t) * big[:d, l * d :]


def series_term(l: int, energies, h1, kernel, matrix_function, cfg: SeriesConfig) -> np.ndarray:
    """``sum over paths f[E_path] * V...V`` for a scalar kernel ``f``.

    ``matrix_function(M)`` must evaluate ``f`` on a square matrix; it is used
    by the block engine, where the order-``l`` term is a block of ``f(M)``.
    """
    e = np.asarray(energies, dtype=float)
    h1 = as_operator(h1, "h1_full")
    if l == 0:
        return np.diag(kernel.value(e).astype(complex))
    n_paths = count_paths(h1, l)
    engine = cfg.engine
    if engine == "auto":
        engine = "path" if n_paths <= AUTO_BLOCK_THRESHOLD else "block"
    if engine == "block":
        d = h1.shape[0]
        return matrix_function(_block_matrix(l, e, h1))[:d, l * d :]
    if n_paths > cfg.path_budget:
        raise PathBudgetError(
            f"{n_paths:.3g} label paths exceed the budget of {cfg.path_budget}; "
            "use a smaller system or a lower order"
        )
    return _path_sum(l, e, h1, kernel, _confluence_tol(e, cfg))


def exact_term(l: int, basis: SesrBasis, h1_full, t: float, cfg: SeriesConfig | None = None) -> PropagatorTerm:
    """The order-``l`` term ``A_l(t)`` in the SESR, using the full perturbation matrix.

    Raises
    ------
    PathBudgetError
        If more label paths than ``cfg.path_budget`` would be enumerated.
    UnsupportedOrderError
        If ``l`` exceeds ``cfg.max_order_exact``.
    """
    cfg = cfg or SeriesConfig(max_order_exact=max(l, 0))
    if l < 0 or l > cfg.max_order_exact:
        raise UnsupportedOrderError(f"order {l} outside [0, {cfg.max_order_exact}]")
    e = np.asarray(basis.energies, dtype=float)
    h1 = as_operator(h1_full, "h1_full")
    if l == 0:
        return PropagatorTerm(0, np.diag(np.exp(-1j * e * t)), t)
    if t == 0.0:
        return PropagatorTerm(l, np.zeros_like(h1), t)
    n_paths = count_paths(h1, l)
    engine = cfg.engine
    if engine == "auto":
        engine = "path" if n_paths <= AUTO_BLOCK_THRESHOLD else "block"
    if engine == "path":
        if n_paths > cfg.path_budget:
            raise PathBudgetError(
                f"{n_paths:.3g} label paths exceed the budget of {cfg.path_budget}; "
                "use a smaller system or a lower order"
            )
        mat = _path_sum(l, e, h1, ExpKernel(t), _confluence_tol(e, cfg))
    else:
        mat = _block_sum(l, e, h1, t)
    return PropagatorTerm(l, mat, t)


def exact_terms(basis: SesrBasis, h1_full, t: float, cfg: SeriesConfig) -> list[np.ndarray]:
    return [exact_term(l, basis, h1_full, t, cfg).matrix for l in range(cfg.max_order_exact + 1)]


def _inverse_differences(e, deg):
    diff = e[:, None] - e[None, :]
    return np.where(deg, 0.0, 1.0 / np.where(deg, 1.0, diff))


def _improved_matrix(l, g, w, p, eta):
    """Improved term of order ``l`` given g1, inverse differences, phases and the eta mask."""
    d = g.shape[0]
    if l == 0:
        return np.diag(p)
    if l == 1:
        return (p[:, None] - p[None, :]) * w * g
    gw = g * w
    gg = g * g.T  # g_a1 g_1a
    if l == 2:
        diag = -np.sum((p[:, None] - p[None, :]) * w**2 * gg, axis=1)
        t1 = p[:, None] * w * (gw @ g)
        t2 = -(gw * p[None, :]) @ gw
        t3 = p[None, :] * w * (g @ gw)
        return np.diag(diag) + eta * (t1 + t2 + t3)
    if l == 3:
        # closed three-step loops on the diagonal
        c1 = gw @ g                        # sum_1 W_a1 g_a1 g_12
        c2 = (g * w**2) @ g                # sum_1 W_a1^2 g_a1 g_12
        s = -p * np.sum(c1 * w**2 * g.T, axis=1)
        s = s - p * np.sum(c2 * w * g.T, axis=1)
        s = s + np.sum(((g * w**2 * p[None, :]) @ gw) * g.T, axis=1)
        s = s - np.sum((g @ gw) * p[None, :] * w**2 * g.T, axis=1)
        loop1 = np.sum(w * gg, axis=1)
        loop2 = np.sum(w**2 * gg, axis=1)
        second = -(p * loop1)[:, None] * w**2 * g - (p * loop2)[:, None] * w * g
        v2 = (gw @ g) * w * eta
        t1 = p[:, None] * w * (v2 @ g)
        t2 = -(gw * p[None, :]) @ (eta * w * (gw @ g))
        t3 = (((g @ gw) * eta * w * p[None, :]) @ gw)
        return np.diag(s) + second + eta * (t1 + t2 + t3)
    raise UnsupportedOrderError("improved terms exist only for orders 0..3")


def improved_term(l: int, basis: SesrBasis, pert: PerturbationData, t: float,
                  cfg: SeriesConfig | None = None, gap_tol: float | None = None) -> PropagatorTerm:
    """The improved term ``A_Il(t)`` with unperturbed denominators and improved phases.

    Requires a redivided perturbation (``h1_diag = 0``).

    Raises
    ------
    UnsupportedOrderError
        For ``l > 3``.
    DegenerateDenominatorError
        If a vanishing denominator multiplies a nonzero numerator.
    """
    if not 0 <= l <= 3:
        raise UnsupportedOrderError("improved terms exist only for orders 0..3")
    g = np.asarray(pert.g1, dtype=complex)
    scale = max(float(np.max(np.abs(g), initial=0.0)), 1.0)
    if np.max(np.abs(pert.h1_diag), initial=0.0) > 1e-12 * scale:
        raise ValueError("improved terms need a redivided perturbation (h1_diag = 0)")
    e = np.asarray(basis.energies, dtype=float)
    p = np.exp(-1j * np.asarray(pert.improved_energies, dtype=float) * t)
    d = e.size
    eta = ~np.eye(d, dtype=bool)
    deg = degeneracy_mask(e, gap_tol)
    w = _inverse_differences(e, deg)
    mat = _improved_matrix(l, g, w, p, eta)
    if l >= 1:
        ga = np.abs(g)
        coupled = ga * (deg & eta) > 1e-10 * scale
        if np.any(coupled):
            a, b = np.argwhere(coupled)[0]
            raise DegenerateDenominatorError(
                f"g1 couples degenerate levels ({a}, {b}); improved terms are undefined", pair=(int(a), int(b)))
        ones = np.ones(d)
        loose = _improved_matrix(l, ga, np.abs(w) + deg, ones, eta)
        tight = _improved_matrix(l, ga, np.abs(w), ones, eta)
        excess = np.abs(loose) - np.abs(tight)
        gm = float(np.max(ga, initial=0.0))
        wm = max(float(np.max(np.abs(w), initial=0.0)), 1.0)
        thresh = 1e-10 * (gm * wm) ** l
        if np.any(excess > thresh):
            a, b = np.unravel_index(int(np.argmax(excess)), excess.shape)
            raise DegenerateDenominatorError(
                f"degenerate denominator with nonzero numerator in improved term of order {l} "
                f"at levels ({a}, {b})", pair=(int(a), int(b)))
    return PropagatorTerm(l, mat, t, improved=True)


def _prepare_rho(rho0, basis: SesrBasis) -> np.ndarray:
    r = as_operator(np.asarray(rho0), "rho0")
    if r.shape[0] != basis.dim:
        raise ValueError(f"rho0 has dim {r.shape[0]}, SESR has dim {basis.dim}")
    return basis.to_sesr(r)


def _default_pert(h1_full, basis: SesrBasis, order: int) -> PerturbationData:
    m = as_operator(h1_full, "h1_full")
    diag = np.real(np.diag(m)).copy()
    g1 = m - np.diag(np.diag(m))
    base = PerturbationData(diag, g1, basis.energies + diag, 1)
    return PerturbationData(diag, g1, improved_energies(base, basis.energies, order), order)


def evolve_total(rho0, t: float, basis: SesrBasis, h1_full, cfg: SeriesConfig | None = None,
                 pert: PerturbationData | None = None, diagnostics: dict | None = None) -> np.ndarray:
    """Total density matrix at time ``t`` in the computational basis.

    Exact mode sums ``A_k rho A_l(-t)`` for ``k, l <= L``; improved mode sums the
    improved terms with ``k + l <= 3``.  The result is symmetrized; the removed
    anti-hermitian part is reported in ``diagnostics["hermiticity_deviation"]``.
    """
    cfg = cfg or SeriesConfig()
    rho = _prepare_rho(rho0, basis)
    if cfg.improved:
        if pert is None:
            pert = _default_pert(h1_full, basis, cfg.improved_energy_order)
        fwd = [improved_term(k, basis, pert, t).matrix for k in range(4)]
        bwd = [improved_term(k, basis, pert, -t).matrix for k in range(4)]
        out = np.zeros_like(rho)
        for k in range(4):
            for l in range(4 - k):
                out += fwd[k] @ rho @ bwd[l]
    else:
        u = np.zeros_like(rho)
        for term in exact_terms(basis, h1_full, t, cfg):
            u += term
        out = u @ rho @ dagger(u)
    dev = float(np.max(np.abs(out - dagger(out)), initial=0.0))
    if diagnostics is not None:
        diagnostics["hermiticity_deviation"] = dev
    return hermitian_part(basis.from_sesr(out))


def evolve_reduced(rho0, t: float, basis: SesrBasis, h1_full, cfg: SeriesConfig | None = None,
                   pert: PerturbationData | None = None, diagnostics: dict | None = None) -> np.ndarray:
    """Reduced system state: the environment partial trace of :func:`evolve_total`."""
    rho = evolve_total(rho0, t, basis, h1_full, cfg, pert, diagnostics)
    return partial_trace_env(rho, basis.dim_s, basis.dim_e)
