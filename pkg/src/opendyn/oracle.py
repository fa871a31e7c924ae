"""
Brute-force references by full eigendecomposition, and method comparison reports.

Nothing here touches the series machinery: the references diagonalize the
total Hamiltonian with ``numpy.linalg.eigh`` and stamp phases.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import check_budget, frobenius_distance, partial_trace_env, trace_distance
from .methods import MILBURN_METHODS, MethodSpec, Problem, run_method


def _eig(h):
    h = np.asarray(h, dtype=complex)
    check_budget(h.shape[0])
    return np.linalg.eigh(0.5 * (h + h.conj().T))


def exact_evolve(h, rho0, t: float) -> np.ndarray:
    """``V exp(-i L t) V^dagger rho0 V exp(i L t) V^dagger``."""
    w, v = _eig(h)
    r = v.conj().T @ np.asarray(rho0, dtype=complex) @ v
    r = r * np.exp(-1j * (w[:, None] - w[None, :]) * t)
    out = v @ r @ v.conj().T
    return 0.5 * (out + out.conj().T)


def milburn_reference(h, rho0, t: float, theta0: float) -> np.ndarray:
    """Eigenbasis dephasing ``rho_ab exp(-i w t - theta0 w^2 t / 2)``, ``w = E_a - E_b``."""
    w, v = _eig(h)
    r = v.conj().T @ np.asarray(rho0, dtype=complex) @ v
    dw = w[:, None] - w[None, :]
    r = r * np.exp(-1j * dw * t - 0.5 * theta0 * dw**2 * t)
    out = v @ r @ v.conj().T
    return 0.5 * (out + out.conj().T)


def reference_states(problem: Problem, t_grid, milburn: bool = False) -> list[np.ndarray]:
    h = problem.h_total
    ds, de = problem.system.dim_s, problem.system.dim_e
    out = []
    for t in np.asarray(t_grid, dtype=float):
        rho = milburn_reference(h, problem.rho0_total, t, problem.theta0) if milburn \
            else exact_evolve(h, problem.rho0_total, t)
        out.append(partial_trace_env(rho, ds, de))
    return out


@dataclass
class MethodErrors:
    method: str
    trace_distance: list
    frobenius: list

    @property
    def max_error(self) -> float:
        return float(max(self.trace_distance, default=0.0))

    @property
    def endpoint_error(self) -> float:
        return float(self.trace_distance[-1]) if self.trace_distance else 0.0


@dataclass
class ComparisonReport:
    times: list
    methods: list = field(default_factory=list)
    scaling: list = field(default_factory=list)   # rows of (parameter, method, max error)

    def __getitem__(self, name: str) -> MethodErrors:
        """Look up by label, or by a method string that parses to the same label."""
        try:
            wanted = {name, MethodSpec.parse(name).label}
        except ValueError:
            wanted = {name}
        for m in self.methods:
            if m.method in wanted:
                return m
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "methods": [
                {
                    "method": m.method,
                    "max_trace_distance": m.max_error,
                    "endpoint_trace_distance": m.endpoint_error,
                    "trace_distance": [float(x) for x in m.trace_distance],
                    "frobenius_distance": [float(x) for x in m.frobenius],
                }
                for m in self.methods
            ],
            "scaling": [[p, name, float(err)] for p, name, err in self.scaling],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"{m.method}:{kind}" for m in self.methods for kind in ("trace", "frobenius")])
        for i, t in enumerate(self.times):
            row = [f"{t:.17g}"]
            for m in self.methods:
                row += [f"{m.trace_distance[i]:.17g}", f"{m.frobenius[i]:.17g}"]
            writer.writerow(row)
        return buf.getvalue()


def compare_methods(problem: Problem, t_grid, methods) -> ComparisonReport:
    """Run each method and the matching eigendecomposition reference on ``t_grid``."""
    grid = [float(t) for t in np.asarray(t_grid, dtype=float)]
    report = ComparisonReport(grid)
    specs = [MethodSpec.parse(m) for m in methods]
    if not specs:
        return report
    refs = {}
    for spec in specs:
        milburn = spec.name in MILBURN_METHODS
        if milburn not in refs:
            refs[milburn] = reference_states(problem, grid, milburn)
        states = run_method(problem, spec, grid)
        ref = refs[milburn]
        report.methods.append(MethodErrors(
            spec.label,
            [trace_distance(a, b) for a, b in zip(states, ref)],
            [frobenius_distance(a, b) for a, b in zip(states, ref)],
        ))
    return report


def scaling_table(make_problem, parameters, t_grid, method) -> ComparisonReport:
    """Max error of ``method`` as a function of a model parameter."""
    grid = [float(t) for t in np.asarray(t_grid, dtype=float)]
    out = ComparisonReport(grid)
    for par in parameters:
        rep = compare_methods(make_problem(par), grid, [method])
        m = rep.methods[0]
        out.scaling.append((float(par), m.method, m.max_error))
    return out


__all__ = [
    "ComparisonReport", "MethodErrors", "compare_methods", "exact_evolve", "milburn_reference",
    "reference_states", "scaling_table",
]
