"""
Named solution methods run on a common problem description.

A method maps a problem and a time grid to reduced system states.  Names:

``exact_series``            series solution summed to order ``L``
``improved_series``         improved series, ``k + l <= 3``
``perturbed_master``        second-order perturbed master equation
``improved_master``         improved second-order master equation
``exact_truncated_master``  exact master equation cut at ``k + l <= cap`` and depth ``N``
``redfield``                Redfield equation (needs vanishing environment averages)
``milburn_closed_form``     Milburn dephasing of the full Hamiltonian
``milburn_kraus``           Milburn Kraus sum with certified cutoff
``milburn_perturbative``    Milburn Kraus operators from the SESR series
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_operator, partial_trace_env
from .master import (
    ExactTruncatedMaster,
    ImprovedMaster,
    OpenSystem,
    PerturbedMaster,
    RedfieldMaster,
    default_dt,
    integrate,
    integrate_redfield,
)
from .milburn import MilburnParams, milburn_evolve_closed_form, milburn_evolve_kraus, milburn_perturbative_reduced
from .propagator import SeriesConfig, evolve_reduced
from .sesr import (
    HamiltonianSplit,
    PerturbationData,
    SesrBasis,
    build_sesr,
    diagonalize_degenerate_subspaces,
    hamiltonian_redivision,
    perturbation_matrix,
    with_improved_energies,
)

METHOD_NAMES = (
    "exact_series", "improved_series", "perturbed_master", "improved_master", "exact_truncated_master",
    "redfield", "milburn_closed_form", "milburn_kraus", "milburn_perturbative",
)
MASTER_METHODS = {"perturbed_master", "improved_master", "exact_truncated_master", "redfield"}
MILBURN_METHODS = {"milburn_closed_form", "milburn_kraus", "milburn_perturbative"}

_DEFAULTS = {
    "exact_series": {"order": 4},
    "improved_series": {"energy_order": 5},
    "perturbed_master": {"dt": None},
    "improved_master": {"dt": None, "energy_order": 5},
    "exact_truncated_master": {"dt": None, "kl_cap": 2, "depth": 1, "max_total_order": None},
    "redfield": {"dt": None},
    "milburn_closed_form": {},
    "milburn_kraus": {"k_max": None},
    "milburn_perturbative": {"k_max": None, "order": 3},
}
_POSITIONAL = {
    "exact_series": ("order",),
    "improved_series": ("energy_order",),
    "exact_truncated_master": ("kl_cap", "depth", "max_total_order"),
    "milburn_kraus": ("k_max",),
    "milburn_perturbative": ("k_max", "order"),
}


@dataclass(frozen=True)
class MethodSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}; expected one of {', '.join(METHOD_NAMES)}")
        allowed = _DEFAULTS[self.name]
        extra = set(self.params) - set(allowed)
        if extra:
            raise ValueError(f"method {self.name!r} does not accept {sorted(extra)}")
        object.__setattr__(self, "params", {**allowed, **self.params})

    @classmethod
    def parse(cls, text) -> "MethodSpec":
        """Accept ``MethodSpec``, ``"name"``, ``"name(a, b)"`` or ``{"name": ..., **params}``."""
        if isinstance(text, MethodSpec):
            return text
        if isinstance(text, dict):
            params = dict(text)
            return cls(params.pop("name"), params)
        m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", str(text))
        if not m:
            raise ValueError(f"cannot parse method {text!r}")
        name, args = m.group(1), m.group(2)
        params = {}
        if args and args.strip():
            keys = _POSITIONAL.get(name, ())
            vals = [a.strip() for a in args.split(",")]
            if len(vals) > len(keys):
                raise ValueError(f"too many arguments for {name!r}")
            for k, v in zip(keys, vals):
                params[k] = None if v.lower() == "none" else int(v)
        return cls(name, params)

    @property
    def label(self) -> str:
        keys = _POSITIONAL.get(self.name, ())
        if not keys:
            return self.name
        return f"{self.name}(" + ",".join(str(self.params[k]) for k in keys) + ")"


@dataclass(frozen=True)
class SeriesSetup:
    split: HamiltonianSplit
    basis: SesrBasis
    pert: PerturbationData | None = None


@dataclass
class Problem:
    """A composite model, its initial state and optional method-specific pieces.

    ``series`` overrides the separated representation used by the series
    methods; by default the eigenbasis of ``hS + hE`` is used.
    """

    system: OpenSystem
    rhoS0: np.ndarray | None = None
    rhoE0: np.ndarray | None = None
    rho0_total: np.ndarray | None = None
    series: SeriesSetup | None = None
    theta0: float = 0.0

    def __post_init__(self):
        if self.rho0_total is None:
            if self.rhoS0 is None or self.rhoE0 is None:
                raise ValueError("give either rho0_total or both rhoS0 and rhoE0")
            self.rho0_total = np.kron(self.rhoS0, self.rhoE0)
        self.rho0_total = as_operator(np.asarray(self.rho0_total), "rho0_total")

    @property
    def factorized(self) -> bool:
        return self.rhoS0 is not None and self.rhoE0 is not None

    @property
    def h_total(self) -> np.ndarray:
        return self.system.h_total

    def series_setup(self) -> SeriesSetup:
        if self.series is not None:
            return self.series
        s = self.system
        split = HamiltonianSplit(s.hS, s.hE, h_tot1=s.h_se)
        return SeriesSetup(split, build_sesr(split), None)

    def improved_setup(self, energy_order: int) -> SeriesSetup:
        base = self.series_setup()
        pert = perturbation_matrix(base.split.h_tot1, base.basis)
        basis, pert = diagonalize_degenerate_subspaces(base.basis, pert)
        split, basis, pert = hamiltonian_redivision(base.split, basis, pert)
        return SeriesSetup(split, basis, with_improved_energies(pert, basis.energies, energy_order))

    def reduce(self, rho_tot) -> np.ndarray:
        return partial_trace_env(rho_tot, self.system.dim_s, self.system.dim_e)


def run_method(problem: Problem, method, t_grid) -> list[np.ndarray]:
    """Reduced states of ``method`` on ``t_grid`` (computational basis)."""
    spec = MethodSpec.parse(method)
    p = spec.params
    grid = np.asarray(t_grid, dtype=float)
    if spec.name in MASTER_METHODS:
        if not problem.factorized:
            raise ValueError(f"{spec.name} needs a factorized initial state")
        dt = p["dt"] or default_dt(problem.h_total)
        sys_, rho_e = problem.system, problem.rhoE0
        if spec.name == "redfield":
            return integrate_redfield(RedfieldMaster(sys_, rho_e), problem.rhoS0, grid, dt).states
        if spec.name == "perturbed_master":
            gen = PerturbedMaster(sys_, rho_e)
        elif spec.name == "improved_master":
            gen = ImprovedMaster(sys_, rho_e, improved_energy_order=p["energy_order"])
        else:
            gen = ExactTruncatedMaster(sys_, rho_e, p["kl_cap"], p["depth"], p["max_total_order"])
        return integrate(gen.rhs, problem.rhoS0, grid, dt).states
    if spec.name == "exact_series":
        setup = problem.series_setup()
        h1 = setup.basis.to_sesr(setup.split.h_tot1)
        cfg = SeriesConfig(max_order_exact=p["order"])
        return [evolve_reduced(problem.rho0_total, t, setup.basis, h1, cfg) for t in grid]
    if spec.name == "improved_series":
        setup = problem.improved_setup(p["energy_order"])
        cfg = SeriesConfig(improved=True, improved_energy_order=p["energy_order"])
        h1 = setup.pert.matrix
        return [evolve_reduced(problem.rho0_total, t, setup.basis, h1, cfg, setup.pert) for t in grid]
    mp = MilburnParams(problem.theta0)
    h = problem.h_total
    if spec.name == "milburn_closed_form":
        return [problem.reduce(milburn_evolve_closed_form(problem.rho0_total, t, h, mp)) for t in grid]
    if spec.name == "milburn_kraus":
        return [problem.reduce(milburn_evolve_kraus(problem.rho0_total, t, h, mp, p["k_max"])) for t in grid]
    setup = problem.series_setup()
    h1 = setup.basis.to_sesr(setup.split.h_tot1)
    return [milburn_perturbative_reduced(problem.rho0_total, t, setup.basis, h1, mp, (p["k_max"], p["order"]))
            for t in grid]


__all__ = ["METHOD_NAMES", "MethodSpec", "Problem", "SeriesSetup", "run_method"]
