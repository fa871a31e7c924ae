"""
Master equations for the reduced system state under a factorized initial state.

All generators are evaluated with composite operators in the computational
basis and an environment partial trace; the series terms come from the
inherent separated representation (eigenbasis of H_S + H_E).

Conventions
-----------
- ``varrho_E(t) = exp(-i hE t) rho_E(0) exp(+i hE t)``.
- ``A_L^(k)(t) = A_k(t) exp(i H0 t)`` and ``A_R^(l)(t) = exp(-i H0 t) A_l(-t)``.
- Time integrals of interaction-picture couplings are done per matrix element
  with ``int_0^t exp(i w s) ds = (exp(i w t) - 1) / (i w)``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AssumptionViolatedError, NonFiniteStateError
from .linalg import (
    DensityMatrix,
    as_operator,
    commutator,
    dagger,
    density_violations,
    hermitian_part,
    is_hermitian,
    partial_trace_env,
    partial_trace_sys,
    unitary_exp,
)
from .propagator import SeriesConfig, exact_term, improved_term
from .sesr import (
    CouplingDecomposition,
    HamiltonianSplit,
    SesrBasis,
    build_sesr,
    diagonalize_degenerate_subspaces,
    hamiltonian_redivision,
    operator_schmidt,
    perturbation_matrix,
    with_improved_energies,
)

ZERO_MEAN_TOL = 1e-10


@dataclass(frozen=True)
class ThermalParams:
    beta_B: float = 0.0

    def __post_init__(self):
        if not self.beta_B >= 0:
            raise ValueError("beta_B must be nonnegative")


def thermal_state(hE, params: ThermalParams | float) -> np.ndarray:
    """``exp(-beta hE) / Tr exp(-beta hE)`` built in the eigenbasis with a ground-energy shift."""
    beta = params.beta_B if isinstance(params, ThermalParams) else float(params)
    if beta < 0:
        raise ValueError("beta_B must be nonnegative")
    w, v = np.linalg.eigh(hermitian_part(as_operator(hE, "hE")))
    weights = np.exp(-beta * (w - w.min()))
    weights /= weights.sum()
    return hermitian_part((v * weights) @ dagger(v))


@dataclass(frozen=True)
class OpenSystem:
    """``H = hS (x) I + I (x) hE + sum_m S_m (x) B_m``."""

    hS: np.ndarray
    hE: np.ndarray
    coupling: CouplingDecomposition = field(default_factory=CouplingDecomposition)

    def __post_init__(self):
        object.__setattr__(self, "hS", as_operator(self.hS, "hS"))
        object.__setattr__(self, "hE", as_operator(self.hE, "hE"))
        if not isinstance(self.coupling, CouplingDecomposition):
            object.__setattr__(self, "coupling", CouplingDecomposition(tuple(self.coupling)))

    @classmethod
    def from_total(cls, h, dim_s: int, dim_e: int) -> "OpenSystem":
        """Split a composite Hamiltonian into local parts and an operator-Schmidt coupling."""
        h = as_operator(h, "H")
        hs = partial_trace_env(h, dim_s, dim_e) / dim_e
        he = partial_trace_sys(h, dim_s, dim_e) / dim_s
        he = he - np.trace(he) / dim_e * np.eye(dim_e)
        hse = h - np.kron(hs, np.eye(dim_e)) - np.kron(np.eye(dim_s), he)
        return cls(hs, he, CouplingDecomposition(tuple(operator_schmidt(hse, dim_s, dim_e))))

    @property
    def dim_s(self) -> int:
        return self.hS.shape[0]

    @property
    def dim_e(self) -> int:
        return self.hE.shape[0]

    @property
    def h_local(self) -> np.ndarray:
        return np.kron(self.hS, np.eye(self.dim_e)) + np.kron(np.eye(self.dim_s), self.hE)

    @property
    def h_se(self) -> np.ndarray:
        return self.coupling.operator(self.dim_s, self.dim_e)

    @property
    def h_total(self) -> np.ndarray:
        return self.h_local + self.h_se

    def free_unitary(self, t: float) -> np.ndarray:
        """``exp(-i (hS + hE) t)`` as a Kronecker product."""
        return np.kron(unitary_exp(self.hS, t), unitary_exp(self.hE, t))

    def inherent_sesr(self) -> tuple[SesrBasis, np.ndarray]:
        """Eigenbasis of the local Hamiltonian and the coupling matrix in it."""
        split = HamiltonianSplit(self.hS, self.hE, h_tot1=self.h_se)
        basis = build_sesr(split)
        return basis, basis.to_sesr(self.h_se)


@dataclass(frozen=True)
class FactorizedInitialState:
    rhoS0: np.ndarray
    rhoE0: np.ndarray

    def __post_init__(self):
        for name in ("rhoS0", "rhoE0"):
            arr = np.asarray(self.__getattribute__(name))
            arr = np.asarray(arr.op if isinstance(arr, DensityMatrix) else arr, dtype=complex)
            problems = density_violations(arr)
            if problems:
                raise ValueError(f"{name}: " + "; ".join(problems))
            object.__setattr__(self, name, arr)

    def total(self) -> np.ndarray:
        return np.kron(self.rhoS0, self.rhoE0)


@dataclass(frozen=True)
class MasterConfig:
    """Integration and truncation settings.

    ``truncation`` is one of ``"second_order"``, ``"improved_second_order"``,
    ``"exact_truncated"`` or ``"redfield"``.  ``dt = None`` selects
    ``min(0.01, 0.01 / ||H_tot||)``.
    """

    truncation: str = "second_order"
    dt: float | None = None
    assume_zero_mean: bool = False
    j_picture: str = "schrodinger"
    kl_cap: int = 2
    iteration_depth: int = 1
    max_total_order: int | None = None
    improved_energy_order: int = 5

    def __post_init__(self):
        if self.truncation not in ("second_order", "improved_second_order", "exact_truncated", "redfield"):
            raise ValueError(f"unknown truncation {self.truncation!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.j_picture not in ("schrodinger", "interaction"):
            raise ValueError("j_picture must be 'schrodinger' or 'interaction'")
        if not 0 <= self.kl_cap <= 2:
            raise ValueError("kl_cap must be in [0, 2]")
        if not 0 <= self.iteration_depth <= 2:
            raise ValueError("iteration_depth must be in [0, 2]")


def default_dt(h_total) -> float:
    norm = float(np.linalg.norm(np.asarray(h_total), 2))
    return min(0.01, 0.01 / norm) if norm > 0 else 0.01


class _TimeCache:
    def __init__(self, size: int = 16):
        self._store: OrderedDict = OrderedDict()
        self._size = size

    def get(self, t, build):
        key = float(t)
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        val = build(key)
        self._store[key] = val
        if len(self._store) > self._size:
            self._store.popitem(last=False)
        return val


def _interval_integral(omega, t):
    """``int_0^t exp(i omega s) ds`` elementwise, with the ``omega -> 0`` limit."""
    omega = np.asarray(omega, dtype=float)
    small = np.abs(omega * t) < 1e-8
    safe = np.where(small, 1.0, omega)
    exact = (np.exp(1j * safe * t) - 1.0) / (1j * safe)
    series = t * (1 + 0.5j * omega * t)
    return np.where(small, series, exact)


class _Environment:
    """Shared pieces: the coupling in the inherent basis and the evolving env state."""

    def __init__(self, model: OpenSystem, rhoE0, j_picture: str = "schrodinger"):
        self.model = model
        self.rhoE0 = as_operator(np.asarray(rhoE0), "rhoE0")
        self.j_picture = j_picture
        self.ds, self.de = model.dim_s, model.dim_e
        self.eye_s = np.eye(self.ds)
        self.eye_e = np.eye(self.de)
        self.basis, self.v_sesr = model.inherent_sesr()
        self.h_se = model.h_se
        self.b_ops = [b for _, b in model.coupling.terms]
        self.s_ops = [s for s, _ in model.coupling.terms]

    def rho_env(self, t: float) -> np.ndarray:
        u = unitary_exp(self.model.hE, t)
        return u @ self.rhoE0 @ dagger(u)

    def env_means(self, t: float) -> list[complex]:
        re = self.rho_env(t)
        return [complex(np.trace(b @ re)) for b in self.b_ops]

    def j_operator(self, t: float) -> np.ndarray:
        """``J(t) = sum_m S_m Tr(B_m varrho_E(t))``; see ``j_picture``."""
        out = np.zeros((self.ds, self.ds), dtype=complex)
        u = unitary_exp(self.model.hS, t) if self.j_picture == "interaction" else None
        for s, mean in zip(self.s_ops, self.env_means(t)):
            op = s if u is None else u @ s @ dagger(u)
            out += mean * op
        return out

    def exact_a(self, k: int, t: float) -> np.ndarray:
        """``A_k(t)`` of the inherent series, in the computational basis."""
        cfg = SeriesConfig(max_order_exact=max(k, 0))
        return self.basis.from_sesr(exact_term(k, self.basis, self.v_sesr, t, cfg).matrix)

    def lift_env(self, op_e) -> np.ndarray:
        return np.kron(self.eye_s, op_e)


class PerturbedMaster(_Environment):
    """Second-order perturbed master equation with the J compensation terms."""

    def __init__(self, model: OpenSystem, rhoE0, j_picture: str = "schrodinger", assume_zero_mean: bool = False):
        super().__init__(model, rhoE0, j_picture)
        self._cache = _TimeCache()
        if assume_zero_mean and not has_zero_env_means(model, self.rhoE0):
            raise AssumptionViolatedError("environment averages of the couplings do not vanish")
        self.assume_zero_mean = assume_zero_mean

    def coefficients(self, t: float) -> dict:
        return self._cache.get(t, self._build)

    def _build(self, t: float) -> dict:
        re = self.lift_env(self.rho_env(t))
        a1 = self.exact_a(1, t)
        xl = a1 @ dagger(self.model.free_unitary(t))       # A_1(t) exp(i H0 t)
        xr = dagger(xl)                                     # exp(-i H0 t) A_1(-t)
        cl = [partial_trace_env(self.lift_env(b) @ xl @ re, self.ds, self.de) for b in self.b_ops]
        cr = [partial_trace_env(re @ xr @ self.lift_env(b), self.ds, self.de) for b in self.b_ops]
        lo = partial_trace_env(xl @ re, self.ds, self.de)
        ro = partial_trace_env(re @ xr, self.ds, self.de)
        return {"J": self.j_operator(t), "CL": cl, "CR": cr, "L": lo, "R": ro}

    def rhs(self, rho, t: float) -> np.ndarray:
        if self.assume_zero_mean:
            return self.rhs_zero_mean(rho, t)
        c = self.coefficients(t)
        hs, j = self.model.hS, c["J"]
        out = -1j * commutator(hs, rho) - 1j * commutator(j, rho)
        for s, cl, cr in zip(self.s_ops, c["CL"], c["CR"]):
            out -= 1j * commutator(s, rho @ cr + cl @ rho)
        out += 1j * commutator(j, rho @ c["R"] + c["L"] @ rho)
        return out

    def rhs_zero_mean(self, rho, t: float) -> np.ndarray:
        """The reduced form valid when the first-order environment average vanishes."""
        c = self.coefficients(t)
        out = -1j * commutator(self.model.hS, rho)
        for s, cl, cr in zip(self.s_ops, c["CL"], c["CR"]):
            out -= 1j * commutator(s, rho @ cr + cl @ rho)
        return out

    def dropped_terms(self, rho, t: float) -> np.ndarray:
        """``i[J, rho] + [J, int_0^t Tr_E[Hbar_SE(s), rho (x) rho_E(0)] ds]``."""
        j = self.j_operator(t)
        kbar = self._bar_integral(t)
        x = np.kron(rho, self.rhoE0)
        inner = partial_trace_env(commutator(kbar, x), self.ds, self.de)
        return 1j * commutator(j, rho) + commutator(j, inner)

    def _bar_integral(self, t: float) -> np.ndarray:
        """``int_0^t exp(-i H0 s) H_SE exp(i H0 s) ds``; equals ``i A_1(t) exp(i H0 t)``."""
        e = self.basis.energies
        omega = -(e[:, None] - e[None, :])
        return self.basis.from_sesr(self.v_sesr * _interval_integral(omega, t))


class ImprovedMaster(_Environment):
    """The improved second-order master equation, transcribed term by term.

    The exponential ``exp(i H_tot0 t)`` uses the local Hamiltonian; the improved
    terms are built from the redivided perturbation of the inherent basis.
    """

    def __init__(self, model: OpenSystem, rhoE0, j_picture: str = "schrodinger",
                 improved_energy_order: int = 5):
        super().__init__(model, rhoE0, j_picture)
        pert = perturbation_matrix(self.h_se, self.basis)
        basis, pert = diagonalize_degenerate_subspaces(self.basis, pert)
        split = HamiltonianSplit(model.hS, model.hE, h_tot1=self.h_se)
        _, self.red_basis, red = hamiltonian_redivision(split, basis, pert)
        self.pert = with_improved_energies(red, self.red_basis.energies, improved_energy_order)
        self._cache = _TimeCache()

    def improved_a(self, k: int, t: float) -> np.ndarray:
        return self.red_basis.from_sesr(improved_term(k, self.red_basis, self.pert, t).matrix)

    def coefficients(self, t: float) -> dict:
        return self._cache.get(t, self._build)

    def _build(self, t: float) -> dict:
        re = self.lift_env(self.rho_env(t))
        back = dagger(self.model.free_unitary(t))          # exp(i H0 t)
        out = {"J": self.j_operator(t), "CL": [], "CR": []}
        for a in (0, 1):
            xl = self.improved_a(a, t) @ back
            xr = dagger(back) @ self.improved_a(a, -t)
            out["CL"].append([partial_trace_env(self.lift_env(b) @ xl @ re, self.ds, self.de) for b in self.b_ops])
            out["CR"].append([partial_trace_env(re @ xr @ self.lift_env(b), self.ds, self.de) for b in self.b_ops])
            if a == 1:
                out["L"] = partial_trace_env(xl @ re, self.ds, self.de)
                out["R"] = partial_trace_env(re @ xr, self.ds, self.de)
        return out

    def rhs(self, rho, t: float) -> np.ndarray:
        c = self.coefficients(t)
        j, lo, ro = c["J"], c["L"], c["R"]
        out = -1j * commutator(self.model.hS, rho) + 1j * commutator(j, rho)
        for a in (0, 1):
            for s, cl, cr in zip(self.s_ops, c["CL"][a], c["CR"][a]):
                out -= 1j * commutator(s, rho @ cr + cl @ rho)
        out -= 1j * commutator(j, rho @ ro + lo @ rho)
        for s, cl0, cr0 in zip(self.s_ops, c["CL"][0], c["CR"][0]):
            out += 1j * commutator(s, cl0 @ rho @ ro + cl0 @ lo @ rho + rho @ ro @ cr0 + lo @ rho @ cr0)
        return out


class RedfieldMaster(_Environment):
    """Redfield equation in the interaction picture of ``hS + hE``.

    The state argument of :meth:`rhs` is ``exp(i hS t) rho_S(t) exp(-i hS t)``.

    Raises
    ------
    AssumptionViolatedError
        If ``Tr_E[H~_SE(t), rho_S (x) rho_E(0)]`` can be nonzero, i.e. the
        environment averages of the couplings do not vanish.
    """

    def __init__(self, model: OpenSystem, rhoE0, check_every_call: bool = True):
        super().__init__(model, rhoE0, "schrodinger")
        self.check_every_call = check_every_call
        self._check_zero_means(0.0)
        self._cache = _TimeCache()

    def _check_zero_means(self, t: float):
        # Tr_E[H~_SE(t), rho_S (x) rho_E] = [sum_m S~_m Tr(B~_m rho_E), rho_S] for every rho_S
        ue = unitary_exp(self.model.hE, -t)
        mean_op = np.zeros((self.ds, self.ds), dtype=complex)
        for s, b in zip(self.s_ops, self.b_ops):
            mean_op += s * np.trace(ue @ b @ dagger(ue) @ self.rhoE0)
        dev = float(np.linalg.norm(mean_op - np.trace(mean_op) / self.ds * np.eye(self.ds)))
        if dev >= ZERO_MEAN_TOL:
            raise AssumptionViolatedError(
                f"first-order environment average does not vanish (norm {dev:.3g}); "
                "use the perturbed master equation instead"
            )

    def _build(self, t: float):
        e = self.basis.energies
        omega = e[:, None] - e[None, :]
        h_t = self.basis.from_sesr(self.v_sesr * np.exp(1j * omega * t))
        k_t = self.basis.from_sesr(self.v_sesr * _interval_integral(omega, t))
        return h_t, k_t

    def rhs(self, rho_tilde, t: float) -> np.ndarray:
        if self.check_every_call and t != 0.0:
            self._check_zero_means(t)
        h_t, k_t = self._cache.get(t, self._build)
        x = np.kron(rho_tilde, self.rhoE0)
        return -partial_trace_env(commutator(h_t, commutator(k_t, x)), self.ds, self.de)

    def to_schrodinger(self, rho_tilde, t: float) -> np.ndarray:
        u = unitary_exp(self.model.hS, t)
        return u @ rho_tilde @ dagger(u)

    def to_interaction(self, rho, t: float) -> np.ndarray:
        u = unitary_exp(self.model.hS, t)
        return dagger(u) @ rho @ u


class ExactTruncatedMaster(_Environment):
    """The exact master equation with its series cut at ``k + l <= kl_cap`` and depth N.

    ``varrho_S = sum_{N} (-K')^N rho_S`` is applied as nested superoperator
    compositions, ``K' = sum_{0 < k + l <= cap} K^{kl}``.  With
    ``max_total_order`` set, a term is kept only if the perturbative orders
    of its factors (``k + l + 1`` for C, ``k + l`` for K) sum to at most that.
    """

    def __init__(self, model: OpenSystem, rhoE0, kl_cap: int = 2, iteration_depth: int = 1,
                 max_total_order: int | None = None, j_picture: str = "schrodinger"):
        super().__init__(model, rhoE0, j_picture)
        self.kl_cap = kl_cap
        self.depth = iteration_depth
        self.max_total_order = max_total_order
        self._cache = _TimeCache()

    def _pairs(self):
        return [(k, l) for k in range(self.kl_cap + 1) for l in range(self.kl_cap + 1 - k)]

    def _build(self, t: float):
        re = self.lift_env(self.rho_env(t))
        back = dagger(self.model.free_unitary(t))
        orders = sorted({k for k, _ in self._pairs()})
        a_fwd = {k: self.exact_a(k, t) for k in orders}
        left = {k: a_fwd[k] @ back for k in orders}
        right = {k: dagger(left[k]) for k in orders}        # exp(-i H0 t) A_k(-t)
        return left, right, re

    def _k_apply(self, k, l, x, ops):
        left, right, re = ops
        return partial_trace_env(left[k] @ np.kron(x, np.eye(self.de)) @ re @ right[l], self.ds, self.de)

    def _c_apply(self, m, k, l, x, ops):
        left, right, re = ops
        full = self.lift_env(self.b_ops[m]) @ left[k] @ np.kron(x, np.eye(self.de)) @ re @ right[l]
        return partial_trace_env(full, self.ds, self.de)

    def varrho_terms(self, rho, ops) -> list[tuple[int, np.ndarray]]:
        """``(order, (-K')^N rho)`` pieces, each tagged by its perturbative order."""
        terms = [(0, rho)]
        frontier = [(0, rho)]
        for _ in range(self.depth):
            nxt = []
            for order, x in frontier:
                for k, l in self._pairs():
                    if k + l == 0:
                        continue
                    o = order + k + l
                    if self.max_total_order is not None and o > self.max_total_order - 1:
                        continue
                    nxt.append((o, -self._k_apply(k, l, x, ops)))
            terms.extend(nxt)
            frontier = nxt
        return terms

    def rhs(self, rho, t: float) -> np.ndarray:
        ops = self._cache.get(t, self._build)
        out = -1j * commutator(self.model.hS, rho)
        pieces = self.varrho_terms(rho, ops)
        for m, s in enumerate(self.s_ops):
            acc = np.zeros_like(rho)
            for k, l in self._pairs():
                for order, x in pieces:
                    if self.max_total_order is not None and order + k + l + 1 > self.max_total_order:
                        continue
                    acc += self._c_apply(m, k, l, x, ops)
            out -= 1j * commutator(s, acc)
        return out


@dataclass(frozen=True)
class EnvSideOperator:
    kind: str
    order: int
    beta: int
    beta_prime: int
    matrix: np.ndarray
    time: float


def env_side_operator(kind: str, k: int, t: float, beta: int, beta_prime: int,
                      basis: SesrBasis, h1_full) -> EnvSideOperator:
    """Environment block of ``A_L^(k)(t)`` (``kind="left"``) or ``A_R^(k)(-t)`` (``kind="right"``).

    Matrix elements are in the environment vectors of the SESR.
    """
    if kind not in ("left", "right"):
        raise ValueError("kind must be 'left' or 'right'")
    de = basis.dim_e
    e = basis.energies.reshape(basis.dim_s, de)
    cfg = SeriesConfig(max_order_exact=max(k, 0))
    if kind == "left":
        a = exact_term(k, basis, h1_full, t, cfg).matrix.reshape(basis.dim_s, de, basis.dim_s, de)
        mat = a[beta, :, beta_prime, :] * np.exp(1j * e[beta_prime] * t)[None, :]
    else:
        a = exact_term(k, basis, h1_full, -t, cfg).matrix.reshape(basis.dim_s, de, basis.dim_s, de)
        mat = np.exp(-1j * e[beta] * t)[:, None] * a[beta, :, beta_prime, :]
    return EnvSideOperator(kind, k, beta, beta_prime, mat, t)


def coefficient_K(k: int, l: int, t: float, indices, varrho_e, basis: SesrBasis, h1_full) -> complex:
    """``Tr_E[A_EL^(k)(beta, beta') varrho_E A_ER^(l)(gamma, gamma')]`` in SESR environment labels."""
    b, bp, g, gp = indices
    left = env_side_operator("left", k, t, b, bp, basis, h1_full).matrix
    right = env_side_operator("right", l, t, g, gp, basis, h1_full).matrix
    return complex(np.trace(left @ np.asarray(varrho_e) @ right))


def coefficient_C(b_m, k: int, l: int, t: float, indices, varrho_e, basis: SesrBasis, h1_full) -> complex:
    """``Tr_E[B_m A_EL^(k) varrho_E A_ER^(l)]``; ``b_m`` and ``varrho_e`` in SESR environment labels."""
    b, bp, g, gp = indices
    left = env_side_operator("left", k, t, b, bp, basis, h1_full).matrix
    right = env_side_operator("right", l, t, g, gp, basis, h1_full).matrix
    return complex(np.trace(np.asarray(b_m) @ left @ np.asarray(varrho_e) @ right))


def build_master(model: OpenSystem, rhoE0, cfg: MasterConfig):
    """Instantiate the generator selected by ``cfg.truncation``."""
    if cfg.truncation == "second_order":
        return PerturbedMaster(model, rhoE0, cfg.j_picture, cfg.assume_zero_mean)
    if cfg.truncation == "improved_second_order":
        return ImprovedMaster(model, rhoE0, cfg.j_picture, cfg.improved_energy_order)
    if cfg.truncation == "redfield":
        return RedfieldMaster(model, rhoE0)
    return ExactTruncatedMaster(model, rhoE0, cfg.kl_cap, cfg.iteration_depth, cfg.max_total_order, cfg.j_picture)


def rhs_perturbed(rhoS, t: float, model: OpenSystem, rhoE0, j_picture: str = "schrodinger") -> np.ndarray:
    return PerturbedMaster(model, rhoE0, j_picture).rhs(np.asarray(rhoS, dtype=complex), t)


def rhs_improved(rhoS, t: float, model: OpenSystem, rhoE0, improved_energy_order: int = 5) -> np.ndarray:
    return ImprovedMaster(model, rhoE0, improved_energy_order=improved_energy_order).rhs(np.asarray(rhoS, dtype=complex), t)


def rhs_redfield(rho_tilde, t: float, model: OpenSystem, rhoE0) -> np.ndarray:
    return RedfieldMaster(model, rhoE0).rhs(np.asarray(rho_tilde, dtype=complex), t)


def dropped_mean_terms(rhoS, t: float, model: OpenSystem, rhoE0) -> np.ndarray:
    return PerturbedMaster(model, rhoE0).dropped_terms(np.asarray(rhoS, dtype=complex), t)


def rhs_exact_truncated(rhoS, t: float, model: OpenSystem, rhoE0, kl_cap: int = 2,
                        iteration_depth: int = 1, max_total_order: int | None = None) -> np.ndarray:
    gen = ExactTruncatedMaster(model, rhoE0, kl_cap, iteration_depth, max_total_order)
    return gen.rhs(np.asarray(rhoS, dtype=complex), t)


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    trace_drift: list = field(default_factory=list)
    min_eigenvalues: list = field(default_factory=list)

    def __iter__(self):
        return iter(zip(self.times, self.states))

    def __len__(self):
        return len(self.states)


def integrate(rhs: Callable, rho0, t_grid, dt: float = 0.01, renormalize: bool = False) -> Trajectory:
    """Classical fixed-step RK4 on a monotone grid.

    Each grid interval is split into equal substeps no longer than ``dt``.
    The state is symmetrized after every substep; positivity and trace drift
    are recorded per grid point, not enforced.

    Raises
    ------
    NonFiniteStateError
        When a substep produces NaN or infinite entries.
    """
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("t_grid must be a nonempty 1-D sequence")
    if grid.size > 1 and np.any(np.diff(grid) < 0):
        raise ValueError("t_grid must be monotone nondecreasing")
    if not dt > 0:
        raise ValueError("dt must be positive")
    rho = hermitian_part(np.array(rho0, dtype=complex))
    states, drift, mins = [rho.copy()], [0.0], [float(np.linalg.eigvalsh(rho).min())]
    tr0 = np.trace(rho).real
    step = 0
    for t0, t1 in zip(grid[:-1], grid[1:]):
        span = t1 - t0
        n = max(1, int(np.ceil(span / dt - 1e-9))) if span > 0 else 0
        h = span / n if n else 0.0
        for j in range(n):
            t = t0 + j * h
            with np.errstate(over="ignore", invalid="ignore"):
                k1 = rhs(rho, t)
                k2 = rhs(rho + 0.5 * h * k1, t + 0.5 * h)
                k3 = rhs(rho + 0.5 * h * k2, t + 0.5 * h)
                k4 = rhs(rho + h * k3, t + h)
                rho = hermitian_part(rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
            step += 1
            if not np.all(np.isfinite(rho)):
                raise NonFiniteStateError(f"non-finite state at step {step}", step=step)
        if renormalize:
            rho = rho / np.trace(rho).real
        states.append(rho.copy())
        drift.append(float(np.trace(rho).real - tr0))
        mins.append(float(np.linalg.eigvalsh(rho).min()))
    return Trajectory(grid.copy(), states, drift, mins)


def integrate_redfield(gen: RedfieldMaster, rhoS0, t_grid, dt: float) -> Trajectory:
    """Integrate in the interaction picture and return Schrodinger-picture states."""
    traj = integrate(gen.rhs, gen.to_interaction(np.asarray(rhoS0, dtype=complex), float(t_grid[0])), t_grid, dt)
    traj.states = [hermitian_part(gen.to_schrodinger(r, t)) for t, r in zip(traj.times, traj.states)]
    return traj


def has_zero_env_means(model: OpenSystem, rhoE0, times=(0.0, 0.37, 1.3)) -> bool:
    """True when every coupling has zero environment average along the free evolution."""
    try:
        gen = RedfieldMaster(model, rhoE0)
        for t in times:
            gen._check_zero_means(t)
    except AssumptionViolatedError:
        return False
    return True


__all__ = [
    "EnvSideOperator", "ExactTruncatedMaster", "FactorizedInitialState", "ImprovedMaster",
    "MasterConfig", "OpenSystem", "PerturbedMaster", "RedfieldMaster", "ThermalParams", "Trajectory",
    "build_master", "coefficient_C", "coefficient_K", "default_dt", "dropped_mean_terms",
    "env_side_operator", "integrate", "integrate_redfield", "has_zero_env_means", "rhs_exact_truncated",
    "rhs_improved", "rhs_perturbed", "rhs_redfield", "thermal_state",
]
