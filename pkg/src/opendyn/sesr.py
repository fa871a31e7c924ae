"""
System-environment separated representation (SESR).

An unperturbed Hamiltonian of the form

    H_tot0 = hS0 (x) I + I (x) hE0 + sum_m S_m0 (x) B_m0

is solvable in a product basis |phi^gamma> (x) |chi^v> whenever hS0 and the
S_m0 share eigenvectors and so do hE0 and the B_m0.  Everything else of the
total Hamiltonian is the perturbation H_tot1, whose matrix in that basis
splits into a diagonal part h1 and an off-diagonal part g1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateDenominatorError,
    DimensionMismatchError,
    NotHermitianError,
    SolvabilityError,
)
from .linalg import (
    as_operator,
    check_budget,
    commutator,
    dagger,
    hermitian_eigendecomposition,
    hermitian_part,
    is_hermitian,
)

COMMUTE_TOL = 1e-10
DEGENERACY_REL_TOL = 1e-9


@dataclass(frozen=True)
class CouplingDecomposition:
    """``sum_m S_m (x) B_m`` kept as its list of factor pairs."""

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple((as_operator(s, "S_m"), as_operator(b, "B_m")) for s, b in self.terms)
        object.__setattr__(self, "terms", terms)

    def __len__(self):
        return len(self.terms)

    def operator(self, dim_s: int, dim_e: int) -> np.ndarray:
        out = np.zeros((dim_s * dim_e, dim_s * dim_e), dtype=complex)
        for s, b in self.terms:
            if s.shape[0] != dim_s or b.shape[0] != dim_e:
                raise DimensionMismatchError("coupling factor dimensions do not match the split")
            out += np.kron(s, b)
        return out

    @classmethod
    def from_operator(cls, h, dim_s: int, dim_e: int, tol: float = 1e-12) -> "CouplingDecomposition":
        """Operator-Schmidt decomposition of a composite operator into hermitian factor pairs."""
        return cls(tuple(operator_schmidt(h, dim_s, dim_e, tol)))


def operator_schmidt(h, dim_s: int, dim_e: int, tol: float = 1e-12) -> list[tuple[np.ndarray, np.ndarray]]:
    """Write ``h`` as ``sum_m S_m (x) B_m`` with hermitian factors when ``h`` is hermitian.

    The realignment of ``h`` is decomposed by SVD; for hermitian input the
    factors are then rotated onto the real span of hermitian matrices.
    """
    h = as_operator(h, "h")
    if h.shape[0] != dim_s * dim_e:
        raise DimensionMismatchError(f"operator of dim {h.shape[0]} is not on a {dim_s}x{dim_e} space")
    scale = float(np.max(np.abs(h), initial=0.0))
    if scale == 0.0:
        return []
    if is_hermitian(h, 1e-10 * scale):
        # expand over a hermitian orthonormal basis of the system operators
        basis = _hermitian_operator_basis(dim_s)
        r = h.reshape(dim_s, dim_e, dim_s, dim_e)
        # coeff[k] = Tr_S[(P_k^dag (x) I) h]; hermitian P_k give hermitian coefficients
        coeff = np.einsum("kij,iajb->kab", np.conj(np.array(basis)), r)
        mats = [hermitian_part(c) for c in coeff]
        flat = np.array([np.concatenate([m.real.ravel(), m.imag.ravel()]) for m in mats])
        u, s, vt = np.linalg.svd(flat, full_matrices=False)
        keep = s > tol * max(s[0], 1e-300)
        terms = []
        for j in np.flatnonzero(keep):
            s_op = sum(u[k, j] * basis[k] for k in range(len(basis)))
            vec = s[j] * vt[j]
            half = dim_e * dim_e
            b_op = (vec[:half] + 1j * vec[half:]).reshape(dim_e, dim_e)
            terms.append((np.asarray(s_op, dtype=complex), hermitian_part(b_op)))
        return terms
    realigned = h.reshape(dim_s, dim_e, dim_s, dim_e).transpose(0, 2, 1, 3).reshape(dim_s * dim_s, dim_e * dim_e)
    u, s, vh = np.linalg.svd(realigned, full_matrices=False)
    keep = s > tol * s[0]
    return [
        (u[:, j].reshape(dim_s, dim_s) * s[j], vh[j].reshape(dim_e, dim_e))
        for j in np.flatnonzero(keep)
    ]


def _hermitian_operator_basis(dim: int) -> list[np.ndarray]:
    """Orthonormal (Hilbert-Schmidt) basis of hermitian ``dim x dim`` matrices."""
    out = []
    for i in range(dim):
        e = np.zeros((dim, dim), dtype=complex)
        e[i, i] = 1.0
        out.append(e)
    for i in range(dim):
        for j in range(i + 1, dim):
            e = np.zeros((dim, dim), dtype=complex)
            e[i, j] = e[j, i] = 1 / np.sqrt(2)
            out.append(e)
            e = np.zeros((dim, dim), dtype=complex)
            e[i, j] = -1j / np.sqrt(2)
            e[j, i] = 1j / np.sqrt(2)
            out.append(e)
    return out


@dataclass(frozen=True)
class HamiltonianSplit:
    """``H_tot = H_tot0 + H_tot1`` with the solvable part given factor-wise.

    ``h_tot0_shift`` holds any composite operator moved into the unperturbed
    part by a redivision; it is diagonal in the SESR by construction.
    """

    hS0: np.ndarray
    hE0: np.ndarray
    hSE0_terms: CouplingDecomposition = field(default_factory=CouplingDecomposition)
    h_tot1: np.ndarray | None = None
    h_tot0_shift: np.ndarray | None = None

    def __post_init__(self):
        hs = as_operator(self.hS0, "hS0")
        he = as_operator(self.hE0, "hE0")
        object.__setattr__(self, "hS0", hs)
        object.__setattr__(self, "hE0", he)
        if not isinstance(self.hSE0_terms, CouplingDecomposition):
            object.__setattr__(self, "hSE0_terms", CouplingDecomposition(tuple(self.hSE0_terms)))
        dim = hs.shape[0] * he.shape[0]
        check_budget(dim)
        h1 = np.zeros((dim, dim), dtype=complex) if self.h_tot1 is None else as_operator(self.h_tot1, "h_tot1")
        if h1.shape[0] != dim:
            raise DimensionMismatchError(f"h_tot1 has dim {h1.shape[0]}, expected {dim}")
        object.__setattr__(self, "h_tot1", h1)
        if self.h_tot0_shift is not None:
            object.__setattr__(self, "h_tot0_shift", as_operator(self.h_tot0_shift, "h_tot0_shift"))
        h0 = self.h_tot0()
        scale = max(1.0, float(np.max(np.abs(h0), initial=0.0)))
        if not is_hermitian(h0, 1e-10 * scale):
            raise NotHermitianError("H_tot0 is not hermitian")
        if not is_hermitian(h1, 1e-10 * max(1.0, float(np.max(np.abs(h1), initial=0.0)))):
            raise NotHermitianError("H_tot1 is not hermitian")

    @property
    def dim_s(self) -> int:
        return self.hS0.shape[0]

    @property
    def dim_e(self) -> int:
        return self.hE0.shape[0]

    def h_tot0(self) -> np.ndarray:
        ds, de = self.dim_s, self.dim_e
        h0 = np.kron(self.hS0, np.eye(de)) + np.kron(np.eye(ds), self.hE0)
        h0 = h0 + self.hSE0_terms.operator(ds, de)
        if self.h_tot0_shift is not None:
            h0 = h0 + self.h_tot0_shift
        return h0

    def h_total(self) -> np.ndarray:
        return self.h_tot0() + self.h_tot1


@dataclass(frozen=True)
class SesrBasis:
    """Product eigenbasis of H_tot0 and its energies, indexed ``gamma * dim_e + v``.

    ``basis_change`` has the SESR vectors as columns.  It equals
    ``kron(system_vectors, env_vectors)`` while ``product_form`` is true; a
    degenerate-subspace rotation can mix labels and clears the flag.
    """

    dim_s: int
    dim_e: int
    energies: np.ndarray
    basis_change: np.ndarray
    system_vectors: np.ndarray
    env_vectors: np.ndarray
    product_form: bool = True

    @classmethod
    def from_factors(cls, system_vectors, env_vectors, energies) -> "SesrBasis":
        us = np.asarray(system_vectors, dtype=complex)
        ue = np.asarray(env_vectors, dtype=complex)
        e = np.asarray(energies, dtype=float).ravel()
        if e.size != us.shape[1] * ue.shape[1]:
            raise DimensionMismatchError("energy vector length does not match factor bases")
        return cls(us.shape[0], ue.shape[0], e, np.kron(us, ue), us, ue, True)

    @property
    def dim(self) -> int:
        return self.dim_s * self.dim_e

    def to_sesr(self, op) -> np.ndarray:
        u = self.basis_change
        return dagger(u) @ np.asarray(op) @ u

    def from_sesr(self, op) -> np.ndarray:
        u = self.basis_change
        return u @ np.asarray(op) @ dagger(u)


@dataclass(frozen=True)
class PerturbationData:
    """Diagonal (``h1_diag``) and off-diagonal (``g1``) parts of H_tot1 in the SESR."""

    h1_diag: np.ndarray
    g1: np.ndarray
    improved_energies: np.ndarray
    improved_order: int = 1

    @property
    def matrix(self) -> np.ndarray:
        """The full perturbation matrix ``g1 + diag(h1)``."""
        return self.g1 + np.diag(self.h1_diag)


def _commute_ok(a, b, tol) -> bool:
    return float(np.max(np.abs(commutator(a, b)), initial=0.0)) <= tol


def _factor_families(split: HamiltonianSplit):
    """Return (system ops, env ops) that must be simultaneously diagonalizable, or raise."""
    tol = COMMUTE_TOL * max(1.0, float(np.max(np.abs(split.h_tot0()), initial=0.0)))

    def admissible(terms):
        sys_ops = [split.hS0] + [s for s, _ in terms]
        env_ops = [split.hE0] + [b for _, b in terms]
        for fam in (sys_ops, env_ops):
            for i in range(len(fam)):
                for j in range(i + 1, len(fam)):
                    if not _commute_ok(fam[i], fam[j], tol):
                        return None
                if not _commute_ok(fam[i], dagger(fam[i]), tol):
                    return None
        return sys_ops, env_ops

    given = admissible(split.hSE0_terms.terms)
    if given is not None:
        return given
    if len(split.hSE0_terms):
        # alternative grouping B_m = sum_n c_mn B'_n: regroup by operator-Schmidt form
        regrouped = operator_schmidt(split.hSE0_terms.operator(split.dim_s, split.dim_e), split.dim_s, split.dim_e)
        alt = admissible(regrouped)
        if alt is not None:
            return alt
    raise SolvabilityError("H_SE0 violates SESR solvability: factor operators do not commute")


def _hermitian_components(op):
    parts = [hermitian_part(op)]
    anti = (op - dagger(op)) / 2j
    if np.max(np.abs(anti), initial=0.0) > 0:
        parts.append(anti)
    return parts


def simultaneous_eigenbasis(ops, tol: float = 1e-10) -> np.ndarray:
    """Common eigenbasis of commuting normal operators by refinement of degenerate blocks.

    A block on which an operator is already diagonal is left untouched, so
    operators diagonal in the computational basis keep its ordering.
    """
    dim = ops[0].shape[0]
    u = np.eye(dim, dtype=complex)
    blocks = [np.arange(dim)]
    for op in ops:
        for h in _hermitian_components(op):
            scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
            new_blocks = []
            for blk in blocks:
                cols = u[:, blk]
                sub = dagger(cols) @ h @ cols
                off = sub - np.diag(np.diag(sub))
                if blk.size == 1 or np.max(np.abs(off), initial=0.0) <= tol * scale:
                    vals = np.real(np.diag(sub))
                    rot = np.eye(blk.size, dtype=complex)
                else:
                    vals, rot = hermitian_eigendecomposition(hermitian_part(sub), tol)
                u[:, blk] = cols @ rot
                # split the block into clusters of equal eigenvalue, keeping column order
                groups: list[list[int]] = []
                keys: list[float] = []
                for pos, val in enumerate(vals):
                    for gi, key in enumerate(keys):
                        if abs(val - key) <= tol * scale:
                            groups[gi].append(pos)
                            break
                    else:
                        keys.append(val)
                        groups.append([pos])
                # keep columns of each cluster contiguous
                order = [p for g in groups for p in g]
                u[:, blk] = u[:, blk][:, order]
                start = 0
                for g in groups:
                    new_blocks.append(blk[start : start + len(g)])
                    start += len(g)
            blocks = new_blocks
    return u


def build_sesr(split: HamiltonianSplit) -> SesrBasis:
    """Product eigenbasis of ``split.h_tot0()`` and the energies ``E_{gamma v}``.

    Raises
    ------
    SolvabilityError
        If the commuting structure fails under both admissible groupings, or the
        assembled H_tot0 is not diagonal in the resulting product basis.
    """
    sys_ops, env_ops = _factor_families(split)
    us = simultaneous_eigenbasis(sys_ops)
    ue = simultaneous_eigenbasis(env_ops)
    u = np.kron(us, ue)
    h0 = split.h_tot0()
    d = dagger(u) @ h0 @ u
    scale = max(1.0, float(np.linalg.norm(h0)))
    off = d - np.diag(np.diag(d))
    if np.max(np.abs(off), initial=0.0) > 1e-9 * scale:
        raise SolvabilityError("simultaneous diagonalization failed: H_tot0 not diagonal in product basis")
    return SesrBasis(split.dim_s, split.dim_e, np.real(np.diag(d)).copy(), u, us, ue, True)


def perturbation_matrix(h_tot1, basis: SesrBasis) -> PerturbationData:
    h1 = as_operator(h_tot1, "h_tot1")
    if h1.shape[0] != basis.dim:
        raise DimensionMismatchError(f"h_tot1 has dim {h1.shape[0]}, basis has {basis.dim}")
    m = hermitian_part(basis.to_sesr(h1))
    diag = np.real(np.diag(m)).copy()
    g1 = m - np.diag(np.diag(m))
    return PerturbationData(diag, g1, basis.energies + diag, 1)


def hamiltonian_redivision(split: HamiltonianSplit, basis: SesrBasis, pert: PerturbationData | None = None):
    """Move the SESR-diagonal part of H_tot1 into H_tot0.

    Returns the new split, the basis with shifted energies, and the new
    perturbation data (``h1_diag = 0``, ``g1`` unchanged).
    """
    if pert is None:
        pert = perturbation_matrix(split.h_tot1, basis)
    moved = basis.from_sesr(np.diag(pert.h1_diag).astype(complex))
    shift = moved if split.h_tot0_shift is None else split.h_tot0_shift + moved
    new_split = replace(split, h_tot1=split.h_tot1 - moved, h_tot0_shift=shift)
    energies = basis.energies + pert.h1_diag
    new_basis = replace(basis, energies=energies)
    new_pert = PerturbationData(np.zeros_like(pert.h1_diag), pert.g1.copy(), energies.copy(), 1)
    return new_split, new_basis, new_pert


def default_gap_tol(energies) -> float:
    e = np.asarray(energies, dtype=float)
    if e.size == 0:
        return 0.0
    return DEGENERACY_REL_TOL * float(e.max() - e.min())


def energy_clusters(energies, gap_tol: float | None = None) -> list[np.ndarray]:
    """Index groups of (numerically) equal energies, each sorted ascending."""
    e = np.asarray(energies, dtype=float)
    tol = default_gap_tol(e) if gap_tol is None else gap_tol
    order = np.argsort(e, kind="stable")
    clusters, current = [], [order[0]] if e.size else []
    for prev, nxt in zip(order[:-1], order[1:]):
        if e[nxt] - e[prev] <= tol:
            current.append(nxt)
        else:
            clusters.append(np.sort(np.array(current)))
            current = [nxt]
    if current:
        clusters.append(np.sort(np.array(current)))
    return clusters


def degeneracy_mask(energies, gap_tol: float | None = None) -> np.ndarray:
    """``mask[a, b]`` is true when levels a and b are degenerate (diagonal included)."""
    e = np.asarray(energies, dtype=float)
    tol = default_gap_tol(e) if gap_tol is None else gap_tol
    return np.abs(e[:, None] - e[None, :]) <= tol


def diagonalize_degenerate_subspaces(basis: SesrBasis, pert: PerturbationData, gap_tol: float | None = None):
    """Diagonalize the g1 block inside every degenerate cluster and rotate the basis accordingly."""
    m = pert.matrix.copy()
    u = basis.basis_change.copy()
    rotated = False
    scale = max(float(np.max(np.abs(m), initial=0.0)), 1e-300)
    for cl in energy_clusters(basis.energies, gap_tol):
        if cl.size < 2:
            continue
        block = m[np.ix_(cl, cl)]
        off = block - np.diag(np.diag(block))
        if np.max(np.abs(off), initial=0.0) <= 1e-14 * scale:
            continue
        _, v = hermitian_eigendecomposition(hermitian_part(block))
        rot = np.eye(basis.dim, dtype=complex)
        rot[np.ix_(cl, cl)] = v
        m = dagger(rot) @ m @ rot
        u = u @ rot
        rotated = True
    if not rotated:
        return basis, pert
    m = hermitian_part(m)
    h1 = np.real(np.diag(m)).copy()
    g1 = m - np.diag(np.diag(m))
    new_basis = replace(basis, basis_change=u, product_form=False)
    return new_basis, PerturbationData(h1, g1, basis.energies + h1, 1)


@dataclass(frozen=True)
class DegeneracyReport:
    ok: bool
    pairs: tuple = ()
    max_offdiagonal: float = 0.0

    def __bool__(self):
        return self.ok


def check_degenerate_offdiagonals(basis: SesrBasis, pert: PerturbationData, gap_tol: float | None = None) -> DegeneracyReport:
    """Check that g1 vanishes between every pair of degenerate levels."""
    mask = degeneracy_mask(basis.energies, gap_tol)
    np.fill_diagonal(mask, False)
    norm = float(np.linalg.norm(pert.matrix))
    thresh = 1e-10 * norm if norm > 0 else 0.0
    vals = np.abs(pert.g1) * mask
    worst = float(vals.max(initial=0.0))
    bad = np.argwhere(np.triu(vals > thresh))
    pairs = tuple((int(a), int(b)) for a, b in bad)
    return DegeneracyReport(not pairs, pairs, worst)


class _PathWeights:
    """Inverse energy differences with a record of degenerate positions."""

    def __init__(self, energies, g1, gap_tol):
        e = np.asarray(energies, dtype=float)
        self.g = np.asarray(g1, dtype=complex)
        self.deg = degeneracy_mask(e, gap_tol)
        diff = e[:, None] - e[None, :]
        with np.errstate(divide="ignore"):
            self.w = np.where(self.deg, 0.0, 1.0 / np.where(self.deg, 1.0, diff))
        gmax = float(np.max(np.abs(self.g), initial=0.0))
        self.gmax = gmax
        self.d = e.size

    def _check(self, value_with, value_without, order, what):
        excess = value_with - value_without
        thresh = 1e-10 * max(self.gmax, 1e-300) ** order * max(float(np.max(np.abs(self.w), initial=1.0)), 1.0) ** order
        bad = np.flatnonzero(excess > thresh)
        if bad.size:
            a = int(bad[0])
            partners = np.flatnonzero(self.deg[a] & (np.abs(self.g[a]) > 0))
            partners = partners[partners != a]
            pair = (a, int(partners[0])) if partners.size else (a, None)
            raise DegenerateDenominatorError(
                f"degenerate denominator with nonzero numerator in {what} at level {a}", pair=pair
            )

    def loop(self, power: int) -> np.ndarray:
        """``sum_x |g_ax|^2 W_ax^power`` for every a."""
        g2 = np.abs(self.g) ** 2
        val = np.sum(g2 * self.w**power, axis=1)
        self._check(np.sum(g2 * (np.abs(self.w) ** power + self.deg), axis=1),
                    np.sum(g2 * np.abs(self.w) ** power, axis=1), 2, "two-step loop")
        return val

    def chain(self, powers, exclude_start) -> np.ndarray:
        """Closed path ``a -> x1 -> ... -> xn -> a`` weighted by ``prod W_{a x_i}^{p_i}``.

        ``exclude_start[i]`` drops paths whose i-th intermediate label equals a.
        """
        g, ga = self.g, np.abs(self.g)
        eye = np.eye(self.d, dtype=bool)
        v = np.eye(self.d, dtype=complex)
        va = np.eye(self.d)
        vd = np.eye(self.d)
        for p, excl in zip(powers, exclude_start):
            keep = ~eye if excl else np.ones_like(eye)
            v = (v @ g) * self.w**p * keep
            va = (va @ ga) * np.abs(self.w) ** p * keep
            vd = (vd @ ga) * (np.abs(self.w) ** p + (self.deg & keep)) * keep
        total = np.sum(v * g.T, axis=1)
        self._check(np.sum(vd * ga.T, axis=1), np.sum(va * ga.T, axis=1), len(powers) + 1, "path sum")
        return total


def energy_corrections(energies, g1, order: int, gap_tol: float | None = None) -> list[np.ndarray]:
    """The corrections G2..G_order as a list (empty for order <= 1).

    Raises
    ------
    DegenerateDenominatorError
        If a vanishing denominator meets a nonzero numerator.
    """
    if not 1 <= order <= 5:
        raise ValueError("improved energy order must be in [1, 5]")
    if order < 2:
        return []
    pw = _PathWeights(energies, g1, gap_tol)
    g2 = pw.loop(1)
    out = [np.real(g2)]
    if order >= 3:
        out.append(np.real(pw.chain([1, 1], [False, False])))
    if order >= 4:
        l2 = pw.loop(2)
        out.append(np.real(pw.chain([1, 1, 1], [False, True, False]) - l2 * g2))
    if order >= 5:
        first = pw.chain([1, 1, 1, 1], [False, True, True, False])
        rest = (
            l2 * pw.chain([1, 1], [False, False])
            + g2 * pw.chain([2, 1], [False, False])
            + g2 * pw.chain([1, 2], [False, False])
        )
        out.append(np.real(first - rest))
    return out


def improved_energies(pert: PerturbationData, energies, order: int, gap_tol: float | None = None) -> np.ndarray:
    """``E + h1 + G2 + ... + G_order`` from the nested-sum corrections."""
    e = np.asarray(energies, dtype=float) + pert.h1_diag
    for corr in energy_corrections(energies, pert.g1, order, gap_tol):
        e = e + corr
    return e


def with_improved_energies(pert: PerturbationData, energies, order: int, gap_tol: float | None = None) -> PerturbationData:
    return replace(pert, improved_energies=improved_energies(pert, energies, order, gap_tol), improved_order=order)


def prepare_improved(split: HamiltonianSplit, order: int = 5, gap_tol: float | None = None):
    """Degenerate-subspace diagonalization, redivision and improved energies in one pass."""
    basis = build_sesr(split)
    pert = perturbation_matrix(split.h_tot1, basis)
    basis, pert = diagonalize_degenerate_subspaces(basis, pert, gap_tol)
    split, basis, pert = hamiltonian_redivision(split, basis, pert)
    return split, basis, with_improved_energies(pert, basis.energies, order, gap_tol)
