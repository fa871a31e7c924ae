"""
Scenario files: one JSON document describing a model, an initial state, a
method and a time grid.

Example::

    {
      "model": {"type": "zurek", "N_E": 2, "Z": [1.0, 0.5]},
      "initial_state": {"system": "plus", "environment": ["plus", "plus"]},
      "method": {"name": "improved_series"},
      "t_start": 0.0, "t_end": 2.0, "n_steps": 20,
      "oracle": true,
      "output": {"trajectory": "zurek.csv", "summary": "zurek.json"}
    }

``model.type`` is ``zurek``, ``extended`` or ``custom``.  A custom model reads
its Hamiltonian from ``hamiltonian_file`` (``.npy`` or JSON with ``real`` and
``imag`` arrays) with ``dim_s`` and ``dim_e``.  Relative paths are resolved
against the scenario file's directory.

Only ``model`` and ``method`` are required.  The time grid defaults to
``t_start = 0``, ``t_end = 1``, ``n_steps = 10``, and spin-bath models default
to ``|+>`` for the system and every environment qubit.

``initial_state.system`` is a named qubit state (``zero``, ``one``, ``plus``,
``minus``, ``plus_i``, ``minus_i``) or ``random`` (drawn from ``seed``);
``environment`` is a list of named qubit states, ``"thermal"`` (Gibbs state of
the environment Hamiltonian at ``beta_B``) or ``"mixed"``.  Alternatively
``matrix_file`` gives the full initial density matrix.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ScenarioError
from .methods import METHOD_NAMES, MethodSpec

NAMED_STATES = {
    "zero": (1.0, 0.0),
    "one": (0.0, 1.0),
    "plus": (1 / math.sqrt(2), 1 / math.sqrt(2)),
    "minus": (1 / math.sqrt(2), -1 / math.sqrt(2)),
    "plus_i": (1 / math.sqrt(2), 1j / math.sqrt(2)),
    "minus_i": (1 / math.sqrt(2), -1j / math.sqrt(2)),
}
MODEL_TYPES = ("zurek", "extended", "custom")
CASES = ("inherent", "one", "four")
DEFAULT_GRID = (0.0, 1.0, 10)      # t_start, t_end, n_steps

_TOP_KEYS = {"model", "case", "initial_state", "method", "theta0", "beta_B", "t_start", "t_end",
             "n_steps", "oracle", "output", "seed"}
_MODEL_KEYS = {"type", "N_E", "Z", "X", "mu", "hamiltonian_file", "dim_s", "dim_e"}
_STATE_KEYS = {"system", "environment", "matrix_file"}
_OUTPUT_KEYS = {"trajectory", "summary"}


@dataclass(frozen=True)
class ModelConfig:
    type: str
    N_E: int | None = None
    Z: tuple | None = None
    X: tuple | None = None
    mu: float | None = None
    hamiltonian_file: str | None = None
    dim_s: int | None = None
    dim_e: int | None = None


@dataclass(frozen=True)
class InitialStateConfig:
    system: str | None = None
    environment: tuple | str | None = None
    matrix_file: str | None = None


@dataclass(frozen=True)
class OutputConfig:
    trajectory: str = "trajectory.csv"
    summary: str = "summary.json"


@dataclass(frozen=True)
class Scenario:
    model: ModelConfig
    initial_state: InitialStateConfig
    method: MethodSpec
    t_start: float
    t_end: float
    n_steps: int
    case: str = "inherent"
    theta0: float | None = None
    beta_B: float | None = None
    oracle: bool = True
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    base_dir: str = field(default=".", compare=False)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        out = {
            "model": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in asdict(self.model).items() if v is not None},
            "case": self.case,
            "initial_state": {k: (list(v) if isinstance(v, tuple) else v)
                              for k, v in asdict(self.initial_state).items() if v is not None},
            "method": {"name": self.method.name, **self.method.params},
            "t_start": self.t_start,
            "t_end": self.t_end,
            "n_steps": self.n_steps,
            "oracle": self.oracle,
            "output": asdict(self.output),
            "seed": self.seed,
        }
        if self.theta0 is not None:
            out["theta0"] = self.theta0
        if self.beta_B is not None:
            out["beta_B"] = self.beta_B
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _key_line(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Checker:
    def __init__(self, text: str):
        self.text = text

    def fail(self, where: str, message: str, key: str | None = None):
        line = _key_line(self.text, key or where.split(".")[-1])
        loc = f"{where} (line {line})" if line else where
        raise ScenarioError(message, location=loc)

    def keys(self, obj, allowed, where):
        if not isinstance(obj, dict):
            self.fail(where, "expected an object")
        for k in obj:
            if k not in allowed:
                self.fail(f"{where}.{k}" if where else k, f"unknown key {k!r}", key=k)

    def number(self, obj, key, where, default=None, required=False):
        if key not in obj:
            if required:
                self.fail(f"{where}.{key}" if where else key, "missing required field", key=where or key)
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(f"{where}.{key}" if where else key, f"expected a finite number, got {v!r}", key=key)
        return float(v)

    def integer(self, obj, key, where, default=None, required=False):
        if key not in obj:
            if required:
                self.fail(f"{where}.{key}" if where else key, "missing required field", key=where or key)
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"{where}.{key}" if where else key, f"expected an integer, got {v!r}", key=key)
        return v

    def vector(self, obj, key, where):
        if key not in obj:
            return None
        v = obj[key]
        if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
            self.fail(f"{where}.{key}", "expected a list of numbers", key=key)
        return tuple(float(x) for x in v)


def _parse_model(ck: _Checker, raw, base: Path) -> ModelConfig:
    ck.keys(raw, _MODEL_KEYS, "model")
    kind = raw.get("type")
    if kind not in MODEL_TYPES:
        ck.fail("model.type", f"expected one of {MODEL_TYPES}, got {kind!r}", key="type")
    if kind == "custom":
        path = raw.get("hamiltonian_file")
        if not isinstance(path, str):
            ck.fail("model.hamiltonian_file", "custom models need a hamiltonian_file", key="model")
        full = Path(path) if Path(path).is_absolute() else base / path
        if not full.is_file():
            ck.fail("model.hamiltonian_file", f"file not found: {path}", key="hamiltonian_file")
        ds = ck.integer(raw, "dim_s", "model", required=True)
        de = ck.integer(raw, "dim_e", "model", required=True)
        if ds < 1 or de < 1:
            ck.fail("model.dim_s", "dimensions must be positive", key="dim_s")
        for k in ("N_E", "Z", "X", "mu"):
            if k in raw:
                ck.fail(f"model.{k}", "not used by custom models", key=k)
        return ModelConfig("custom", hamiltonian_file=path, dim_s=ds, dim_e=de)
    for k in ("hamiltonian_file", "dim_s", "dim_e"):
        if k in raw:
            ck.fail(f"model.{k}", f"only custom models take {k}", key=k)
    n_e = ck.integer(raw, "N_E", "model", required=True)
    if n_e < 1:
        ck.fail("model.N_E", "N_E must be at least 1", key="N_E")
    z = ck.vector(raw, "Z", "model")
    if z is None:
        ck.fail("model.Z", "missing required field", key="model")
    x = ck.vector(raw, "X", "model")
    mu = ck.number(raw, "mu", "model")
    if len(z) != n_e or (x is not None and len(x) != n_e):
        ck.fail("model.Z", f"Z and X need exactly N_E = {n_e} entries", key="Z")
    if kind == "zurek":
        if (x is not None and any(x)) or (mu not in (None, 0.0)):
            ck.fail("model.type", "the zurek model has mu = 0 and X = 0; use 'extended'", key="type")
    return ModelConfig(kind, n_e, z, x, mu)


def _parse_state(ck: _Checker, raw, base: Path, model: ModelConfig) -> InitialStateConfig:
    ck.keys(raw, _STATE_KEYS, "initial_state")
    if "matrix_file" in raw:
        if set(raw) != {"matrix_file"}:
            ck.fail("initial_state", "matrix_file excludes system/environment", key="initial_state")
        path = raw["matrix_file"]
        full = Path(path) if Path(path).is_absolute() else base / path
        if not isinstance(path, str) or not full.is_file():
            ck.fail("initial_state.matrix_file", f"file not found: {path}", key="matrix_file")
        return InitialStateConfig(matrix_file=path)
    sys_state = raw.get("system")
    if sys_state not in (*NAMED_STATES, "random"):
        ck.fail("initial_state.system", f"unknown system state {sys_state!r}", key="system")
    env = raw.get("environment")
    if isinstance(env, list):
        if any(e not in NAMED_STATES for e in env):
            ck.fail("initial_state.environment", "unknown named environment state", key="environment")
        if model.type == "custom" and 2 ** len(env) != model.dim_e:
            ck.fail("initial_state.environment", f"need qubit states spanning dim_e = {model.dim_e}", key="environment")
        if model.type != "custom" and len(env) != model.N_E:
            ck.fail("initial_state.environment", f"need {model.N_E} qubit states", key="environment")
        env = tuple(env)
    elif env not in ("thermal", "mixed"):
        ck.fail("initial_state.environment", "expected a list of named states, 'thermal' or 'mixed'", key="environment")
    if model.type == "custom" and model.dim_s != 2 and sys_state != "random":
        ck.fail("initial_state.system", "named qubit states need dim_s = 2", key="system")
    return InitialStateConfig(sys_state, env)


def _parse_method(ck: _Checker, raw) -> MethodSpec:
    if isinstance(raw, str):
        raw = {"name": raw}
    if not isinstance(raw, dict) or "name" not in raw:
        ck.fail("method", "expected a method name or an object with 'name'")
    if raw["name"] not in METHOD_NAMES:
        ck.fail("method.name", f"unknown method {raw['name']!r}", key="name")
    for k, v in raw.items():
        if k != "name" and v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
            ck.fail(f"method.{k}", f"expected a number, got {v!r}", key=k)
    try:
        return MethodSpec.parse(raw)
    except ValueError as exc:
        ck.fail("method", str(exc))


def parse_scenario_text(text: str, base_dir: str | Path = ".") -> Scenario:
    """Parse and validate a scenario document.

    Raises
    ------
    ScenarioError
        With a location for malformed JSON, unknown keys and invalid values.
    """
    base = Path(base_dir)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, location=f"line {exc.lineno}, column {exc.colno}") from None
    ck = _Checker(text)
    ck.keys(raw, _TOP_KEYS, "")
    for req in ("model", "method"):
        if req not in raw:
            raise ScenarioError("missing required field", location=req)
    model = _parse_model(ck, raw["model"], base)
    if "initial_state" not in raw and model.type == "custom":
        raise ScenarioError("custom models need an initial_state", location="initial_state")
    state_raw = raw.get("initial_state", {"system": "plus", "environment": ["plus"] * (model.N_E or 0)})
    state = _parse_state(ck, state_raw, base, model)
    method = _parse_method(ck, raw["method"])
    t0 = ck.number(raw, "t_start", "", default=DEFAULT_GRID[0])
    t1 = ck.number(raw, "t_end", "", default=DEFAULT_GRID[1])
    n = ck.integer(raw, "n_steps", "", default=DEFAULT_GRID[2])
    if n < 1:
        ck.fail("n_steps", "n_steps must be at least 1")
    if t1 < t0:
        ck.fail("t_end", "t_end must not be before t_start")
    case = raw.get("case", "inherent")
    if case not in CASES:
        ck.fail("case", f"expected one of {CASES}, got {case!r}")
    if case != "inherent" and model.type != "extended":
        ck.fail("case", "cases one and four apply to the extended model")
    theta0 = ck.number(raw, "theta0", "")
    if theta0 is not None and theta0 < 0:
        ck.fail("theta0", "theta0 must be nonnegative")
    if method.name.startswith("milburn") and theta0 is None:
        ck.fail("theta0", "Milburn methods need theta0", key="method")
    beta = ck.number(raw, "beta_B", "")
    if beta is not None and beta < 0:
        ck.fail("beta_B", "beta_B must be nonnegative")
    if state.environment == "thermal" and beta is None:
        ck.fail("beta_B", "a thermal environment needs beta_B", key="environment")
    oracle = raw.get("oracle", True)
    if not isinstance(oracle, bool):
        ck.fail("oracle", "expected true or false")
    out_raw = raw.get("output", {})
    ck.keys(out_raw, _OUTPUT_KEYS, "output")
    for k, v in out_raw.items():
        if not isinstance(v, str) or not v:
            ck.fail(f"output.{k}", "expected a file name", key=k)
    output = OutputConfig(**out_raw)
    if output.trajectory == output.summary:
        ck.fail("output", "trajectory and summary must be different files")
    seed = ck.integer(raw, "seed", "", default=0)
    if seed < 0:
        ck.fail("seed", "seed must be nonnegative")
    return Scenario(model, state, method, t0, t1, n, case, theta0, beta, oracle, output, seed, str(base))


def parse_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read file ({exc.strerror})", location=str(path)) from None
    return parse_scenario_text(text, path.parent)


def scenario_fields() -> list[str]:
    return [f.name for f in fields(Scenario) if f.name != "base_dir"]


__all__ = ["InitialStateConfig", "ModelConfig", "NAMED_STATES", "OutputConfig", "Scenario",
           "parse_scenario", "parse_scenario_text", "scenario_fields"]
