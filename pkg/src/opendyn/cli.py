"""Command-line front end: ``opendyn run|validate|compare SCENARIO.json``."""

from __future__ import annotations

import argparse
import csv
import functools
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionBudgetError, OpenDynError, PathBudgetError, ScenarioError
from .linalg import (
    SIGMA_X,
    SIGMA_Z,
    check_budget,
    is_hermitian,
    purity,
    random_density,
    trace_distance,
)
from .master import OpenSystem, thermal_state
from .methods import MASTER_METHODS, MILBURN_METHODS, Problem, SeriesSetup, run_method
from .models import SpinBathSpec, env_field, sesr_for_case, zurek_sesr
from .oracle import reference_states
from .scenario import NAMED_STATES, Scenario, parse_scenario

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_BUDGET = 0, 2, 3, 4

log = logging.getLogger("opendyn")


@dataclass
class BuiltScenario:
    problem: Problem
    advisories: list


def _load_matrix(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False).astype(complex)
    data = json.loads(path.read_text())
    if isinstance(data, dict):
        re_part = np.asarray(data["real"], dtype=float)
        im_part = np.asarray(data.get("imag", np.zeros_like(re_part)), dtype=float)
        return re_part + 1j * im_part
    return np.asarray(data, dtype=complex)


def _ket(name: str) -> np.ndarray:
    return np.array(NAMED_STATES[name], dtype=complex)


def _pure(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex).reshape(-1)
    return np.outer(vec, vec.conj())


def build_problem(s: Scenario) -> BuiltScenario:
    """Model, initial state and separated representation for a scenario.

    Raises
    ------
    ScenarioError
        For inputs that parse but cannot describe a valid problem.
    """
    m = s.model
    advisories = []
    series = None
    if m.type == "custom":
        try:
            h = _load_matrix(s.resolve(m.hamiltonian_file))
        except (OSError, ValueError, KeyError) as exc:
            raise ScenarioError(f"cannot load matrix ({exc})", "model.hamiltonian_file") from None
        check_budget(m.dim_s * m.dim_e)
        if h.shape != (m.dim_s * m.dim_e,) * 2:
            raise ScenarioError(f"expected a {m.dim_s * m.dim_e}-dim square matrix",
                                "model.hamiltonian_file")
        if not np.all(np.isfinite(h)) or not is_hermitian(h, 1e-10 * max(1.0, float(np.abs(h).max()))):
            raise ScenarioError("Hamiltonian must be finite and hermitian",
                                "model.hamiltonian_file")
        system = OpenSystem.from_total(h, m.dim_s, m.dim_e)
    else:
        spec = SpinBathSpec(m.N_E, m.Z, m.X or (), m.mu or 0.0)
        if m.type == "zurek":
            system = OpenSystem(np.zeros((2, 2)), np.zeros((spec.dim_e, spec.dim_e)),
                                [(SIGMA_Z, env_field(spec, "z"))])
            split, basis, pert = zurek_sesr(spec)
            series = SeriesSetup(split, basis, pert)
        else:
            system = OpenSystem(spec.mu * SIGMA_X, np.zeros((spec.dim_e, spec.dim_e)),
                                [(SIGMA_Z, env_field(spec, "xz"))])
            if s.case != "inherent":
                setup = sesr_for_case(spec, s.case)
                series = SeriesSetup(setup.split, setup.basis, setup.pert)
                advisories.extend(setup.advisory)
    st = s.initial_state
    rng = np.random.default_rng(s.seed)
    if st.matrix_file is not None:
        try:
            rho = _load_matrix(s.resolve(st.matrix_file))
        except (OSError, ValueError, KeyError) as exc:
            raise ScenarioError(f"cannot load matrix ({exc})",
                                "initial_state.matrix_file") from None
        if rho.shape != (system.dim_s * system.dim_e,) * 2:
            raise ScenarioError("dimension does not match the model",
                                "initial_state.matrix_file")
        if s.method.name in MASTER_METHODS:
            raise ScenarioError("master equations need a factorized initial state", "method")
        problem = Problem(system, rho0_total=rho, series=series, theta0=s.theta0 or 0.0)
    else:
        rho_s = random_density(system.dim_s, rng) if st.system == "random" else _pure(_ket(st.system))
        if st.environment == "thermal":
            rho_e = thermal_state(system.hE, s.beta_B)
        elif st.environment == "mixed":
            rho_e = np.eye(system.dim_e, dtype=complex) / system.dim_e
        else:
            rho_e = _pure(functools.reduce(np.kron, [_ket(n) for n in st.environment]))
        problem = Problem(system, rho_s, rho_e, series=series, theta0=s.theta0 or 0.0)
    if s.method.name in MILBURN_METHODS and not s.theta0:
        advisories.append("theta0 = 0: Milburn dynamics reduce to unitary evolution")
    return BuiltScenario(problem, advisories)


def _fmt(x: float) -> str:
    return f"{float(x) + 0.0:.17g}"


def _header(dim: int, with_oracle: bool) -> list[str]:
    cols = ["t"]
    for i in range(dim):
        for j in range(dim):
            cols += [f"re_rho_{i}{j}", f"im_rho_{i}{j}"]
    cols += ["trace", "purity"]
    if with_oracle:
        cols.append("trace_distance")
    return cols


def trajectory_rows(times, states, distances=None):
    for k, (t, rho) in enumerate(zip(times, states)):
        row = [_fmt(t)]
        for z in np.asarray(rho).reshape(-1):
            row += [_fmt(z.real), _fmt(z.imag)]
        row += [_fmt(np.trace(rho).real), _fmt(purity(rho))]
        if distances is not None:
            row.append(_fmt(distances[k]))
        yield row


def execute(s: Scenario, output_dir: Path, force_oracle: bool = False, timing: bool = False) -> dict:
    """Run a scenario and write its trajectory CSV and summary JSON.

    Outputs are first written to temporary names and renamed at the end, so
    a failure leaves no partial files behind.
    """
    start = time.perf_counter()
    built = build_problem(s)
    problem = built.problem
    use_oracle = s.oracle or force_oracle
    times = s.times
    states = run_method(problem, s.method, times)
    distances = None
    if use_oracle:
        refs = reference_states(problem, times, milburn=s.method.name in MILBURN_METHODS)
        distances = [trace_distance(a, b) for a, b in zip(states, refs)]
    output_dir.mkdir(parents=True, exist_ok=True)
    traj_path = output_dir / s.output.trajectory
    summ_path = output_dir / s.output.summary
    tmp = [traj_path.with_name(traj_path.name + ".partial"), summ_path.with_name(summ_path.name + ".partial")]
    echo = s.to_dict()
    if force_oracle:
        echo["oracle"] = True
    summary = {
        "scenario": echo,
        "method": s.method.label,
        "truncation": {k: v for k, v in s.method.params.items()},
        "oracle": use_oracle,
        "rows": len(states),
        "max_trace_distance": None if distances is None else float(max(distances)),
        "endpoint_trace_distance": None if distances is None else float(distances[-1]),
        "final_trace": float(np.trace(states[-1]).real),
        "min_eigenvalue": float(min(np.linalg.eigvalsh(r).min() for r in states)),
        "advisories": built.advisories,
    }
    if timing:
        summary["wall_time_s"] = time.perf_counter() - start
    try:
        with open(tmp[0], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_header(problem.system.dim_s, distances is not None))
            writer.writerows(trajectory_rows(times, states, distances))
        with open(tmp[1], "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp[0], traj_path)
        os.replace(tmp[1], summ_path)
    finally:
        for p in tmp:
            if p.exists():
                p.unlink()
    return summary


def run_scenario(s: Scenario, output_dir: str | Path = ".", force_oracle: bool = False,
                 timing: bool = False) -> int:
    """Run a parsed scenario and map failures to exit codes."""
    try:
        summary = execute(s, Path(output_dir), force_oracle, timing)
    except ScenarioError as exc:
        log.error("invalid scenario: %s", exc)
        return EXIT_VALIDATION
    except (DimensionBudgetError, PathBudgetError) as exc:
        log.error("budget exceeded: %s", exc)
        return EXIT_BUDGET
    except (OpenDynError, ValueError, np.linalg.LinAlgError) as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUNTIME
    for note in summary["advisories"]:
        log.warning("advisory: %s", note)
    if summary["max_trace_distance"] is not None:
        log.info("%s: max trace distance to oracle %.3e", summary["method"], summary["max_trace_distance"])
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file")
    common.add_argument("--output-dir", default=".", help="directory for the CSV and JSON outputs")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    common.add_argument("--timing", action="store_true", help="record wall time in the summary (not reproducible)")
    parser = argparse.ArgumentParser(prog="opendyn", description="Open quantum system dynamics from scenario files.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the scenario")
    sub.add_parser("validate", parents=[common], help="check the scenario without running it")
    sub.add_parser("compare", parents=[common], help="run with the exact oracle enabled")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        scenario = parse_scenario(args.scenario)
    except ScenarioError as exc:
        log.error("invalid scenario: %s", exc)
        return EXIT_VALIDATION
    except (DimensionBudgetError, PathBudgetError) as exc:
        log.error("budget exceeded: %s", exc)
        return EXIT_BUDGET
    if args.command == "validate":
        try:
            built = build_problem(scenario)
        except ScenarioError as exc:
            log.error("invalid scenario: %s", exc)
            return EXIT_VALIDATION
        except (DimensionBudgetError, PathBudgetError) as exc:
            log.error("budget exceeded: %s", exc)
            return EXIT_BUDGET
        except (OpenDynError, ValueError) as exc:
            log.error("invalid scenario: %s", exc)
            return EXIT_VALIDATION
        for note in built.advisories:
            log.warning("advisory: %s", note)
        log.info("scenario is valid")
        return EXIT_OK
    return run_scenario(scenario, args.output_dir, force_oracle=args.command == "compare", timing=args.timing)


__all__ = ["build_problem", "execute", "main", "run_scenario", "EXIT_OK", "EXIT_VALIDATION",
           "EXIT_RUNTIME", "EXIT_BUDGET"]
