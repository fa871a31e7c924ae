"""
Spin-bath models: a qubit dephased by N_E environment qubits (Zurek model) and
its extension with transverse fields,

    H = mu sigma_x (x) I + sigma_z (x) sum_k (X_k sigma_x^(k) + Z_k sigma_z^(k)).

Two separated representations are provided.  ``case_one`` takes
``mu sigma_x`` as the unperturbed part (strong transverse field);
``case_four`` takes ``sigma_z (x) B`` and perturbs with ``mu sigma_x`` (weak
field).  Labels are ``(n_S, (n_1, ..., n_N))`` and flatten as
``n_S * 2**N + int(n_1 n_2 ... n_N, base 2)``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDenominatorError, SolvabilityError
from .linalg import (
    IDENTITY_2,
    SIGMA_X,
    SIGMA_Z,
    check_budget,
    dagger,
    embed_site,
    hermitian_part,
    kron_all,
    partial_trace_env,
)
from .sesr import (
    HamiltonianSplit,
    PerturbationData,
    SesrBasis,
    hamiltonian_redivision,
    perturbation_matrix,
    with_improved_energies,
)


class SesrCase(str, enum.Enum):
    CASE_ONE = "one"
    CASE_FOUR = "four"


@dataclass(frozen=True)
class SpinBathSpec:
    N_E: int
    Z: tuple = ()
    X: tuple = ()
    mu: float = 0.0

    def __post_init__(self):
        if int(self.N_E) != self.N_E or self.N_E < 1:
            raise ValueError("N_E must be a positive integer")
        z = tuple(float(v) for v in self.Z)
        x = tuple(float(v) for v in self.X) if len(self.X) else (0.0,) * len(z)
        if len(z) != self.N_E or len(x) != self.N_E:
            raise ValueError(f"Z and X need {self.N_E} entries")
        if not all(np.isfinite(z + x)) or not np.isfinite(self.mu):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "Z", z)
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "mu", float(self.mu))
        check_budget(2 ** (self.N_E + 1))

    @property
    def Y(self) -> np.ndarray:
        return np.hypot(np.array(self.X), np.array(self.Z))

    @property
    def dim_e(self) -> int:
        return 2**self.N_E

    def labels(self) -> list[tuple[int, tuple[int, ...]]]:
        return [(ns, ne) for ns in (0, 1) for ne in itertools.product((0, 1), repeat=self.N_E)]


def _env_signs(n_env: int) -> np.ndarray:
    """``(-1)**n_k`` for every environment label, shape ``(2**N, N)``."""
    bits = np.array(list(itertools.product((0, 1), repeat=n_env)))
    return 1.0 - 2.0 * bits


def f_values(spec: SpinBathSpec) -> np.ndarray:
    """``f_{n_E} = sum_k (-1)**n_k Y_k`` per environment label."""
    return _env_signs(spec.N_E) @ spec.Y


def env_field(spec: SpinBathSpec, which: str = "xz") -> np.ndarray:
    """``B_zE``, ``B_xE`` or their sum on the environment qubits."""
    n = spec.N_E
    out = np.zeros((2**n, 2**n), dtype=complex)
    for k in range(n):
        if "z" in which:
            out += spec.Z[k] * embed_site(SIGMA_Z, k, n)
        if "x" in which:
            out += spec.X[k] * embed_site(SIGMA_X, k, n)
    return out


def build_zurek(spec: SpinBathSpec):
    """``sigma_z (x) B_zE`` and the natural-basis labels in flat order."""
    h = np.kron(SIGMA_Z, env_field(spec, "z"))
    return h, spec.labels()


def zurek_energies(spec: SpinBathSpec) -> np.ndarray:
    e_env = _env_signs(spec.N_E) @ np.array(spec.Z)
    return np.concatenate([e_env, -e_env])


def zurek_exact_solution(rho0, t: float, spec: SpinBathSpec) -> np.ndarray:
    """Phase stamping in the natural basis: ``rho_ab exp(-i (E_a - E_b) t)``."""
    e = zurek_energies(spec)
    rho0 = np.asarray(rho0, dtype=complex)
    return rho0 * np.exp(-1j * (e[:, None] - e[None, :]) * t)


def zurek_coherence_factor(spec: SpinBathSpec, t: float) -> float:
    """``prod_k cos(2 Z_k t)``: the system coherence decay for |+> environment qubits."""
    return float(np.prod(np.cos(2 * np.array(spec.Z) * t)))


def zurek_sesr(spec: SpinBathSpec):
    """Natural basis, all of H in the perturbation, then redivided: nothing is left to perturb."""
    h, _ = build_zurek(spec)
    split = HamiltonianSplit(np.zeros((2, 2)), np.zeros((spec.dim_e, spec.dim_e)), h_tot1=h)
    basis = SesrBasis.from_factors(IDENTITY_2, np.eye(spec.dim_e), np.zeros(2 * spec.dim_e))
    split, basis, pert = hamiltonian_redivision(split, basis)
    return split, basis, with_improved_energies(pert, basis.energies, 5)


def build_extended(spec: SpinBathSpec) -> np.ndarray:
    h = spec.mu * np.kron(SIGMA_X, np.eye(spec.dim_e)) + np.kron(SIGMA_Z, env_field(spec, "xz"))
    return hermitian_part(h)


def chi_vectors(x: float, z: float) -> np.ndarray:
    """Columns are eigenvectors of ``x sigma_x + z sigma_z`` for ``+Y`` and ``-Y``.

    Uses the columns ``(z + s Y, x)`` normalized; where that column vanishes
    the equivalent ``(x, s Y - z)`` is used, and for ``x = z = 0`` the
    computational basis.
    """
    y = float(np.hypot(x, z))
    if y == 0.0:
        return np.eye(2, dtype=complex)
    cols = []
    for sign in (1.0, -1.0):
        v = np.array([z + sign * y, x], dtype=float)
        if np.linalg.norm(v) <= 1e-12 * y:
            v = np.array([x, sign * y - z], dtype=float)
            v = v * np.sign(v[np.argmax(np.abs(v))])
        cols.append(v / np.linalg.norm(v))
    return np.array(cols, dtype=complex).T


def psi_vectors() -> np.ndarray:
    """``(|0> + (-1)**n |1>) / sqrt(2)`` as columns."""
    return np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)


def env_chi_basis(spec: SpinBathSpec) -> np.ndarray:
    return kron_all([chi_vectors(x, z) for x, z in zip(spec.X, spec.Z)])


@dataclass(frozen=True)
class CaseSetup:
    split: HamiltonianSplit
    basis: SesrBasis
    pert: PerturbationData
    advisory: tuple = field(default=())


def sesr_for_case(spec: SpinBathSpec, case: SesrCase | str, energy_order: int = 4) -> CaseSetup:
    """Split, SESR and perturbation data for case one or case four.

    Raises
    ------
    SolvabilityError
        For case four with some ``Y_k = 0``.
    """
    case = SesrCase(case)
    de = spec.dim_e
    y = spec.Y
    notes = []
    if case is SesrCase.CASE_ONE:
        split = HamiltonianSplit(spec.mu * SIGMA_X, np.zeros((de, de)),
                                 h_tot1=np.kron(SIGMA_Z, env_field(spec, "xz")))
        energies = np.repeat([spec.mu, -spec.mu], de)
        basis = SesrBasis.from_factors(psi_vectors(), env_chi_basis(spec), energies)
        pert = perturbation_matrix(split.h_tot1, basis)
        if abs(spec.mu) <= float(np.max(y, initial=0.0)):
            notes.append("case one assumes a strong transverse field: |mu| > max Y_k does not hold")
    else:
        if np.any(y == 0):
            raise SolvabilityError("case four needs every Y_k = sqrt(X_k^2 + Z_k^2) > 0")
        total = build_extended(spec)
        split = HamiltonianSplit(np.zeros((2, 2)), np.zeros((de, de)), h_tot1=total)
        basis = SesrBasis.from_factors(IDENTITY_2, env_chi_basis(spec), np.zeros(2 * de))
        split, basis, pert = hamiltonian_redivision(split, basis)
        if abs(spec.mu) >= float(np.min(y)):
            notes.append("case four assumes a weak transverse field: |mu| < min Y_k does not hold")
    if spec.mu != 0 or case is SesrCase.CASE_FOUR:
        try:
            pert = with_improved_energies(pert, basis.energies, energy_order)
        except DegenerateDenominatorError as exc:
            notes.append(f"improved energies unavailable: {exc}")
    return CaseSetup(split, basis, pert, tuple(notes))


def _label_index(spec: SpinBathSpec, labels) -> tuple[int, int]:
    n_s, n_e = labels
    n_e = tuple(n_e)
    if n_s not in (0, 1) or len(n_e) != spec.N_E or any(b not in (0, 1) for b in n_e):
        raise ValueError(f"invalid label {labels!r}")
    env = int("".join(map(str, n_e)), 2) if n_e else 0
    return n_s, env


def improved_energy_case(spec: SpinBathSpec, case: SesrCase | str, labels) -> float:
    """Closed-form order-4 improved energy, ``E + G2 + G4`` (``G3 = 0``).

    Case one: ``s mu + s f^2 / (2 mu) - s f^4 / (8 mu^3)`` with ``s = (-1)**n_S``;
    case four exchanges ``mu`` and ``f``.
    """
    case = SesrCase(case)
    n_s, env = _label_index(spec, labels)
    s = 1.0 - 2.0 * n_s
    f = float(f_values(spec)[env])
    big, small = (spec.mu, f) if case is SesrCase.CASE_ONE else (f, spec.mu)
    if big == 0:
        what = "mu" if case is SesrCase.CASE_ONE else "f_{n_E}"
        raise DegenerateDenominatorError(f"{what} = 0 makes the improved-energy denominators vanish")
    return s * big + s * small**2 / (2 * big) - s * small**4 / (8 * big**3)


def bracketed_improved_energy(spec: SpinBathSpec, case: SesrCase | str, labels) -> float:
    """The compact bracketed form ``s a [1 + (b/2a)^2 / 2 - (b/2a)^4 / 2]``.

    It disagrees with the correction sum beyond leading order and is kept
    only to report the difference.
    """
    case = SesrCase(case)
    n_s, env = _label_index(spec, labels)
    s = 1.0 - 2.0 * n_s
    f = float(f_values(spec)[env])
    big, small = (spec.mu, f) if case is SesrCase.CASE_ONE else (f, spec.mu)
    r = small / (2 * big)
    return s * big * (1 + 0.5 * r**2 - 0.5 * r**4)


def case_one_density_orders(rho0_tot, t: float, spec: SpinBathSpec, order: int,
                            energies_tilde=None) -> np.ndarray:
    """Order-``o`` part of the improved total state for case one, in the SESR.

    ``rho0_tot`` is given in the computational basis.  Each system level
    ``n`` couples only to ``1 - n`` at fixed environment label with weight
    ``(-1)**n f / (2 mu)``.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if spec.mu == 0:
        raise DegenerateDenominatorError("case one needs mu != 0")
    setup = sesr_for_case(spec, SesrCase.CASE_ONE)
    basis = setup.basis
    de = spec.dim_e
    et = (np.array([improved_energy_case(spec, "one", lab) for lab in spec.labels()])
          if energies_tilde is None else np.asarray(energies_tilde, dtype=float))
    r = basis.to_sesr(np.asarray(rho0_tot, dtype=complex))
    p = np.exp(-1j * et * t)
    d = 2 * de
    idx = np.arange(d)
    flip = (idx + de) % d                         # (n_S, n_E) -> (1 - n_S, n_E)
    sign = np.where(idx < de, 1.0, -1.0)
    w = sign * np.tile(f_values(spec), 2) / (2 * spec.mu)   # (-1)**n_S f_{n_E} / 2 mu
    # first-order amplitude a -> flip(a) and second-order diagonal amplitude
    a1 = (p - p[flip]) * w
    a2 = -(p - p[flip]) * w**2
    if order == 0:
        return np.outer(p, p.conj()) * r
    if order == 1:
        out = np.zeros_like(r)
        # A_I0 rho A_I1^dagger puts weight on <flip(n)|, A_I1 rho A_I0^dagger on |flip(m)>
        out[:, flip] += (p[:, None] * r) * a1.conj()[None, :]
        out[flip, :] += (a1[:, None] * r) * p.conj()[None, :]
        return out
    out = (a2[:, None] * r * p.conj()[None, :]) + (p[:, None] * r * a2.conj()[None, :])
    out[np.ix_(flip, flip)] += a1[:, None] * r * a1.conj()[None, :]
    return out


def case_one_reduced(rho0_tot, t: float, spec: SpinBathSpec, max_order: int = 2) -> np.ndarray:
    """``Tr_E`` of the case-one orders ``0..max_order`` in the computational basis."""
    basis = sesr_for_case(spec, SesrCase.CASE_ONE).basis
    total = sum(case_one_density_orders(rho0_tot, t, spec, o) for o in range(max_order + 1))
    return hermitian_part(partial_trace_env(basis.from_sesr(total), 2, spec.dim_e))


def product_state(system, env_states) -> np.ndarray:
    """Density matrix of a product of kets (system first)."""
    vec = np.asarray(system, dtype=complex).reshape(-1)
    for s in env_states:
        vec = np.kron(vec, np.asarray(s, dtype=complex).reshape(-1))
    return np.outer(vec, vec.conj())


__all__ = [
    "CaseSetup", "SesrCase", "SpinBathSpec", "bracketed_improved_energy", "build_extended", "build_zurek",
    "case_one_density_orders", "case_one_reduced", "chi_vectors", "env_chi_basis", "env_field", "f_values",
    "improved_energy_case", "product_state", "psi_vectors", "sesr_for_case", "zurek_coherence_factor",
    "zurek_energies", "zurek_exact_solution", "zurek_sesr",
]
