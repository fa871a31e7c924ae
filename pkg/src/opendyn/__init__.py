"""Open quantum system dynamics in a system-environment separated representation."""

from .errors import (
    AssumptionViolatedError,
    DegenerateDenominatorError,
    DimensionBudgetError,
    DimensionMismatchError,
    KrausDefectError,
    NonFiniteStateError,
    NotHermitianError,
    OpenDynError,
    PathBudgetError,
    ScenarioError,
    SolvabilityError,
    UnsupportedOrderError,
)
from .master import (
    ExactTruncatedMaster,
    ImprovedMaster,
    OpenSystem,
    PerturbedMaster,
    RedfieldMaster,
    integrate,
    integrate_redfield,
    thermal_state,
)
from .methods import METHOD_NAMES, MethodSpec, Problem, run_method
from .milburn import MilburnParams, milburn_evolve_closed_form, milburn_evolve_kraus
from .oracle import ComparisonReport, compare_methods, exact_evolve, scaling_table
from .propagator import SeriesConfig, evolve_reduced, evolve_total, exact_term, improved_term
from .scenario import Scenario, parse_scenario
from .sesr import HamiltonianSplit, SesrBasis, build_sesr, hamiltonian_redivision, perturbation_matrix

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolatedError", "ComparisonReport", "DegenerateDenominatorError", "DimensionBudgetError",
    "DimensionMismatchError", "ExactTruncatedMaster", "HamiltonianSplit", "ImprovedMaster", "KrausDefectError",
    "METHOD_NAMES", "MethodSpec", "MilburnParams", "NonFiniteStateError", "NotHermitianError", "OpenDynError",
    "OpenSystem", "PathBudgetError", "PerturbedMaster", "Problem", "RedfieldMaster", "Scenario", "ScenarioError",
    "SeriesConfig", "SesrBasis", "SolvabilityError", "UnsupportedOrderError", "build_sesr", "compare_methods",
    "evolve_reduced", "evolve_total", "exact_evolve", "exact_term", "hamiltonian_redivision", "improved_term",
    "integrate", "integrate_redfield", "milburn_evolve_closed_form", "milburn_evolve_kraus", "parse_scenario",
    "perturbation_matrix", "run_method", "scaling_table", "thermal_state",
]
