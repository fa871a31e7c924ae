"""
Dense complex linear algebra for composite system-environment spaces.

Conventions
-----------
- Operators are plain square ``numpy.ndarray`` objects of dtype complex128.
- A composite label ``(gamma, v)`` with ``gamma`` in ``[0, dim_s)`` and ``v``
  in ``[0, dim_e)`` is flattened as ``gamma * dim_e + v`` (system index slow).
  This is the layout produced by ``numpy.kron(system_op, env_op)`` and it makes
  the partial trace over the environment a contiguous block sum.
- Energies are dimensionless, hbar = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionBudgetError, DimensionMismatchError, NotHermitianError

DEFAULT_DIM_BUDGET = 4096
DEFAULT_DENSITY_TOL = 1e-9
DEGENERACY_REL_GAP = 1e-9

_budget = {"dim": DEFAULT_DIM_BUDGET}


def dimension_budget() -> int:
    return _budget["dim"]


def set_dimension_budget(dim: int) -> int:
    """Set the global dimension budget and return the previous value."""
    if dim < 1:
        raise ValueError("dimension budget must be positive")
    previous = _budget["dim"]
    _budget["dim"] = int(dim)
    return previous


def check_budget(dim: int, budget: int | None = None) -> None:
    limit = dimension_budget() if budget is None else budget
    if dim > limit:
        raise DimensionBudgetError(
            f"dimension budget exceeded: {dim} > {limit}"
        )


def as_operator(a, name: str = "operator") -> np.ndarray:
    """Return ``a`` as a finite square complex array (validated copy-free when possible)."""
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def flat_index(gamma: int, v: int, dim_e: int) -> int:
    return gamma * dim_e + v


def split_index(flat: int, dim_e: int) -> tuple[int, int]:
    return divmod(flat, dim_e)


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def is_hermitian(a: np.ndarray, tol: float = 1e-10) -> bool:
    a = np.asarray(a)
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


def tensor_product(a, b, budget: int | None = None) -> np.ndarray:
    """Kronecker product ``a (x) b`` under the flattening convention.

    Raises
    ------
    DimensionBudgetError
        If the product dimension exceeds the budget.
    """
    a = as_operator(a, "a")
    b = as_operator(b, "b")
    check_budget(a.shape[0] * b.shape[0], budget)
    return np.kron(a, b)


def kron_all(ops, budget: int | None = None) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for op in ops:
        out = tensor_product(out, op, budget)
    return out


def embed_site(op, site: int, n_sites: int, local_dim: int = 2) -> np.ndarray:
    """Place a single-site operator at ``site`` of an ``n_sites`` chain, identities elsewhere."""
    eye = np.eye(local_dim, dtype=complex)
    return kron_all([op if k == site else eye for k in range(n_sites)])


def partial_trace_env(rho_tot, dim_s: int, dim_e: int) -> np.ndarray:
    """Trace out the environment: ``rho_S[g, g'] = sum_v rho[(g, v), (g', v)]``."""
    rho_tot = np.asarray(rho_tot)
    if rho_tot.shape[-2:] != (dim_s * dim_e, dim_s * dim_e):
        raise DimensionMismatchError(
            f"operator of shape {rho_tot.shape} is not on a {dim_s}x{dim_e} composite space"
        )
    r = rho_tot.reshape(rho_tot.shape[:-2] + (dim_s, dim_e, dim_s, dim_e))
    return np.einsum("...avbv->...ab", r)


def partial_trace_sys(rho_tot, dim_s: int, dim_e: int) -> np.ndarray:
    rho_tot = np.asarray(rho_tot)
    if rho_tot.shape[-2:] != (dim_s * dim_e, dim_s * dim_e):
        raise DimensionMismatchError(
            f"operator of shape {rho_tot.shape} is not on a {dim_s}x{dim_e} composite space"
        )
    r = rho_tot.reshape(rho_tot.shape[:-2] + (dim_s, dim_e, dim_s, dim_e))
    return np.einsum("...auav->...uv", r)


def _first_nonzero(v: np.ndarray, tol: float) -> int:
    idx = np.flatnonzero(np.abs(v) > tol)
    return int(idx[0]) if idx.size else 0


def _canonical_subspace_basis(vecs: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of span(vecs) built from the projector columns."""
    m = vecs.shape[1]
    proj = vecs @ dagger(vecs)
    cols = proj.copy()
    basis = []
    for _ in range(m):
        norms = np.linalg.norm(cols, axis=0)
        best = norms.max()
        # lowest index among numerically tied columns
        pick = int(np.flatnonzero(norms >= best * (1.0 - 1e-9))[0])
        q = cols[:, pick] / norms[pick]
        basis.append(q)
        cols = cols - np.outer(q, q.conj() @ cols)
    return np.array(basis).T


def _phase_fix(v: np.ndarray) -> np.ndarray:
    k = _first_nonzero(v, 1e-10)
    z = v[k]
    if abs(z) == 0.0:
        return v
    return v * (abs(z) / z)


def degenerate_clusters(values: np.ndarray, rel_gap: float = DEGENERACY_REL_GAP) -> list[np.ndarray]:
    """Group ascending ``values`` into clusters separated by gaps above ``rel_gap * width``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return []
    width = float(values.max() - values.min())
    tol = rel_gap * width
    order = np.argsort(values, kind="stable")
    clusters, current = [], [order[0]]
    for prev, nxt in zip(order[:-1], order[1:]):
        if values[nxt] - values[prev] <= tol:
            current.append(nxt)
        else:
            clusters.append(np.array(current))
            current = [nxt]
    clusters.append(np.array(current))
    return clusters


def hermitian_eigendecomposition(h, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and a reproducible unitary eigenvector matrix.

    Within numerically degenerate clusters the basis is rebuilt from the
    cluster projector, then columns are sorted by descending magnitude of their
    first nonzero component (ties by its index) and every column is phase-fixed
    so that component is real positive.
    """
    h = as_operator(h, "h")
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    if not is_hermitian(h, tol * scale):
        raise NotHermitianError("hermitian_eigendecomposition requires a hermitian input")
    w, v = np.linalg.eigh(hermitian_part(h))
    out = np.empty_like(v)
    pos = 0
    for cluster in degenerate_clusters(w):
        block = v[:, cluster]
        if block.shape[1] > 1:
            block = _canonical_subspace_basis(block)
            keys = []
            for j in range(block.shape[1]):
                k = _first_nonzero(block[:, j], 1e-10)
                keys.append((-round(abs(block[k, j]), 9), k, j))
            block = block[:, [j for _, _, j in sorted(keys)]]
        for j in range(block.shape[1]):
            out[:, pos] = _phase_fix(block[:, j])
            pos += 1
    return w, out


def unitary_exp(h, t: float) -> np.ndarray:
    """``exp(-i h t)`` for hermitian ``h`` via eigendecomposition."""
    w, v = np.linalg.eigh(hermitian_part(np.asarray(h, dtype=complex)))
    return (v * np.exp(-1j * w * t)) @ dagger(v)


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    s = np.linalg.svd(a - b, compute_uv=False)
    return 0.5 * float(np.sum(np.abs(s)))


def frobenius_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def purity(rho) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.einsum("ij,ji->", rho, rho)))


@dataclass(frozen=True)
class DensityMatrix:
    """A validated density operator.

    Hermiticity, unit trace and positivity are checked to ``tol`` at
    construction; the stored array is read-only.
    """

    op: np.ndarray
    tol: float = DEFAULT_DENSITY_TOL
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        arr = as_operator(self.op, "density matrix").copy()
        if self.check:
            problems = density_violations(arr, self.tol)
            if problems:
                raise ValueError("invalid density matrix: " + "; ".join(problems))
        arr.setflags(write=False)
        object.__setattr__(self, "op", arr)

    @property
    def dim(self) -> int:
        return self.op.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.op if dtype is None else self.op.astype(dtype)


def density_violations(rho: np.ndarray, tol: float = DEFAULT_DENSITY_TOL) -> list[str]:
    problems = []
    herm = float(np.max(np.abs(rho - dagger(rho)), initial=0.0))
    if herm > tol:
        problems.append(f"not hermitian (max deviation {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        problems.append(f"trace {tr.real:.12g} differs from 1")
    lam = float(np.linalg.eigvalsh(hermitian_part(rho)).min())
    if lam < -tol:
        problems.append(f"negative eigenvalue {lam:.3g}")
    return problems


def ket(*amplitudes) -> np.ndarray:
    v = np.asarray(amplitudes, dtype=complex).ravel()
    return v / np.linalg.norm(v)


def projector(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).ravel()
    return np.outer(v, v.conj())


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ dagger(g)
    return rho / np.trace(rho)


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * hermitian_part(g)


SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
