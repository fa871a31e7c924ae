"""
Divided differences with exact handling of repeated (confluent) nodes.

The bracketed path coefficient of the series solution,
``sum_i (-1)**(i-1) f(E_i) / d_i``, equals the ordinary divided difference
``f[E_1, ..., E_{l+1}]`` because ``d_i = (-1)**(i-1) prod_{j != i} (E_i - E_j)``.
Divided differences are symmetric in their nodes, so nodes are sorted and
nodes closer than the confluence tolerance are merged; a run of ``m + 1``
equal nodes contributes ``f^(m)(x) / m!``.

Entries of the Newton table whose node span is short compared to the
kernel's length scale are evaluated from a Taylor expansion about the span
centre instead of by differencing, which keeps near-confluent configurations
free of cancellation.
"""

from __future__ import annotations

import math

import numpy as np

CONFLUENCE_REL_TOL = 1e-8
_TAYLOR_SPAN = 1.0      # span * rate below which an entry is expanded, not differenced
_TAYLOR_EPS = 1e-18


class ExpKernel:
    """``f(x) = exp(-i x t)``."""

    def __init__(self, t: float):
        self.t = float(t)

    @property
    def rate(self) -> float:
        return abs(self.t)

    def value(self, x):
        return np.exp(-1j * np.asarray(x) * self.t)

    def taylor(self, c, n: int) -> np.ndarray:
        """Coefficients ``a_0..a_{n-1}`` of ``f(c + h)``; leading axis follows ``c``."""
        c = np.asarray(c, dtype=float)
        j = np.arange(n)
        base = (-1j * self.t) ** j / np.array([math.factorial(k) for k in j], dtype=float)
        return np.exp(-1j * c * self.t)[..., None] * base


class PowerKernel:
    """``f(x) = x**k``; its divided differences are complete homogeneous polynomials."""

    def __init__(self, k: int):
        self.k = int(k)

    rate = 0.0

    def value(self, x):
        return np.asarray(x, dtype=complex) ** self.k

    def taylor(self, c, n: int) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        out = np.zeros(c.shape + (n,), dtype=complex)
        for j in range(min(n, self.k + 1)):
            out[..., j] = math.comb(self.k, j) * c ** (self.k - j)
        return out


class MilburnKernel:
    """``f(x) = x**k * exp(-i x t - theta0 x**2 t / 2)``."""

    def __init__(self, k: int, t: float, theta0: float, scale: float = 1.0):
        self.k = int(k)
        self.t = float(t)
        self.theta0 = float(theta0)
        self.scale = float(scale)

    @property
    def rate(self) -> float:
        t = abs(self.t)
        return t * math.hypot(1.0, self.theta0 * self.scale) + math.sqrt(self.theta0 * t)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x.astype(complex) ** self.k * np.exp(-1j * x * self.t - 0.5 * self.theta0 * x * x * self.t)

    def taylor(self, c, n: int) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        # exp(p1 h + p2 h^2) series by e' = p' e
        p1 = -1j * self.t - self.theta0 * self.t * c
        p2 = -0.5 * self.theta0 * self.t
        e = np.zeros(c.shape + (n,), dtype=complex)
        e[..., 0] = 1.0
        for m in range(n - 1):
            acc = p1 * e[..., m]
            if m >= 1:
                acc = acc + 2.0 * p2 * e[..., m - 1]
            e[..., m + 1] = acc / (m + 1)
        poly = np.zeros(c.shape + (n,), dtype=complex)
        for j in range(min(n, self.k + 1)):
            poly[..., j] = math.comb(self.k, j) * c ** (self.k - j)
        out = np.zeros_like(e)
        for j in range(min(n, self.k + 1)):
            out[..., j:] += poly[..., j : j + 1] * e[..., : n - j]
        g0 = np.exp(-1j * c * self.t - 0.5 * self.theta0 * c * c * self.t)
        return g0[..., None] * out


def _n_terms(order: int, radius_rate: float) -> int:
    """Taylor terms needed for an order-``order`` difference of nodes within ``radius`` of the centre."""
    r = max(radius_rate, 1e-300)
    q, term = 0, 1.0
    while q < 400:
        q += 1
        term *= r * (q + order) / q / (q + order)
        if term < _TAYLOR_EPS:
            break
    return q + 1


def _complete_homogeneous(y: np.ndarray, q_max: int) -> np.ndarray:
    """``h_q(y_row)`` for q = 0..q_max, rows of ``y`` are node sets. Returns (P, q_max + 1)."""
    p = y.shape[0]
    h = np.empty((p, q_max + 1))
    h[:, 0] = 1.0
    y0 = y[:, 0]
    for q in range(1, q_max + 1):
        h[:, q] = h[:, q - 1] * y0
    for i in range(1, y.shape[1]):
        yi = y[:, i]
        for q in range(1, q_max + 1):
            h[:, q] += yi * h[:, q - 1]
    return h


def _taylor_entry(x: np.ndarray, kernel) -> np.ndarray:
    """Divided difference over each row of sorted ``x`` by expansion about the row centre."""
    order = x.shape[1] - 1
    c = 0.5 * (x[:, 0] + x[:, -1])
    y = x - c[:, None]
    if isinstance(kernel, PowerKernel):
        q_max = max(kernel.k - order, -1)
        if q_max < 0:
            return np.zeros(x.shape[0], dtype=complex)
        coeffs = kernel.taylor(c, kernel.k + 1)
    else:
        radius = float(np.max(np.abs(y), initial=0.0))
        q_max = _n_terms(order, radius * max(kernel.rate, 1e-300))
        coeffs = kernel.taylor(c, order + q_max + 1)
    h = _complete_homogeneous(y, q_max)
    return np.einsum("pq,pq->p", coeffs[:, order : order + q_max + 1], h)


def merge_sorted(x: np.ndarray, tol) -> np.ndarray:
    """Sort rows and snap nodes within ``tol`` of their left neighbour onto it."""
    x = np.sort(np.asarray(x, dtype=float), axis=-1)
    tol = np.broadcast_to(np.asarray(tol, dtype=float), x.shape[:-1])
    for i in range(1, x.shape[-1]):
        close = (x[..., i] - x[..., i - 1]) <= tol
        x[..., i] = np.where(close, x[..., i - 1], x[..., i])
    return x


def divided_difference_batch(nodes, kernel, confluence_tol=None) -> np.ndarray:
    """Divided differences of ``kernel`` over every row of ``nodes`` (shape ``(P, l + 1)``).

    ``confluence_tol`` defaults to ``1e-8 * max|node|`` per row.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    p, width = nodes.shape
    if confluence_tol is None:
        confluence_tol = CONFLUENCE_REL_TOL * np.max(np.abs(nodes), axis=1)
    x = merge_sorted(nodes, confluence_tol)
    if width == 1:
        return kernel.value(x[:, 0]).astype(complex)
    rate = kernel.rate
    out = np.empty(p, dtype=complex)
    span = x[:, -1] - x[:, 0]
    short = span * rate <= 2.0 * _TAYLOR_SPAN
    if isinstance(kernel, PowerKernel):
        short[:] = True
    if np.any(short):
        out[short] = _taylor_entry(x[short], kernel)
    long_rows = np.flatnonzero(~short)
    if long_rows.size:
        out[long_rows] = _newton_table(x[long_rows], kernel)
    return out


def _newton_table(x: np.ndarray, kernel) -> np.ndarray:
    width = x.shape[1]
    level = kernel.value(x).astype(complex)          # f[x_j]
    for m in range(1, width):
        den = x[:, m:] - x[:, :-m]
        num = level[:, 1:] - level[:, :-m] if m == 1 else level[:, 1:] - level[:, :-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = num / den
        small = den * kernel.rate <= _TAYLOR_SPAN
        if np.any(small):
            rows, cols = np.nonzero(small)
            for j in np.unique(cols):
                sel = rows[cols == j]
                nxt[sel, j] = _taylor_entry(x[sel, j : j + m + 1], kernel)
        level = nxt
    return level[:, 0]


def divided_difference(nodes, kernel, confluence_tol: float | None = None) -> complex:
    """Scalar divided difference ``f[x_0, ..., x_l]`` of ``kernel``."""
    tol = None if confluence_tol is None else np.array([confluence_tol])
    return complex(divided_difference_batch(np.asarray(nodes, dtype=float)[None, :], kernel, tol)[0])


def divided_difference_exp(nodes, t: float, confluence_tol: float | None = None) -> complex:
    """The ``l``-th divided difference of ``x -> exp(-i x t)`` over ``l + 1`` nodes."""
    return divided_difference(nodes, ExpKernel(t), confluence_tol)


def divided_difference_reference(nodes, kernel) -> complex:
    """Distinct-node formula ``sum_i f(x_i) / prod_{j != i}(x_i - x_j)``; no confluence handling."""
    x = np.asarray(nodes, dtype=float)
    total = 0j
    for i, xi in enumerate(x):
        den = np.prod([xi - xj for j, xj in enumerate(x) if j != i])
        total += complex(kernel.value(xi)) / den
    return total
