"""Experiment configuration files and built-in scenario presets.

A configuration is a JSON object::

    {
      "kind": "linear",                       # or "quadratic"
      "design": {"x1": 0.5, "x2": 2.5, "tau": 14,
                 "inspection_times": [2, 4, ...], "n_units": 200},
      "theta": {"gamma0": ..., "gamma1": ..., "a1": ...},   # optional truth
      "noc": {"x0": 0.3, "t0": 5, "p": 0.5, "level": 0.95, "quantiles": [0.1]},
      "beta_grid": [0, 0.2, 0.4, 0.6, 0.8, 1],
      "contamination": {"cell": 10, "epsilons": [0, 0.5, 1]},
      "seed": 2024,
      "replicates": 1000
    }

Only ``kind`` and ``design`` are mandatory.  Validation errors name the
offending field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .characteristics import NocQuery
from .estimation import FitOptions
from .model import KINDS, BaselineHazard, ModelParams, StepStressDesign, param_names
from .simulation import ContaminationSpec, SimulationConfig

DEFAULT_BETAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_EPSILONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    design: StepStressDesign
    theta0: ModelParams | None = None
    query: NocQuery = field(default_factory=lambda: NocQuery(x0=0.0))
    quantiles: tuple[float, ...] = ()
    beta_grid: tuple[float, ...] = DEFAULT_BETAS
    contaminated_cell: int | None = None
    epsilons: tuple[float, ...] = (0.0,)
    seed: int = 0
    replicates: int = 1000

    def require_theta(self) -> ModelParams:
        if self.theta0 is None:
            raise ConfigError("theta", "a true parameter vector is required for this command")
        return self.theta0

    def simulation_config(self, fit_options: FitOptions | None = None) -> SimulationConfig:
        return SimulationConfig(
            theta0=self.require_theta(),
            design=self.design,
            query=self.query,
            beta_grid=self.beta_grid,
            epsilons=self.epsilons,
            contaminated_cell=self.contaminated_cell,
            replicates=self.replicates,
            master_seed=self.seed,
            fit_options=fit_options or FitOptions(),
        )

    def with_tau(self, tau: float) -> "ExperimentConfig":
        d = self.design
        try:
            design = StepStressDesign(d.x1, d.x2, float(tau), d.inspection_times, d.n_units)
        except ValueError as exc:
            raise ConfigError("design.tau", str(exc)) from None
        return replace(self, design=design)

    def to_dict(self) -> dict:
        d = self.design
        out = {
            "kind": self.kind,
            "design": {
                "x1": d.x1,
                "x2": d.x2,
                "tau": d.tau,
                "inspection_times": list(d.inspection_times),
                "n_units": d.n_units,
            },
            "theta": None
            if self.theta0 is None
            else dict(zip(param_names(self.kind), map(float, self.theta0.vector))),
            "noc": {
                "x0": self.query.x0,
                "t0": self.query.t0,
                "p": self.query.p,
                "level": self.query.level,
                "quantiles": list(self.quantiles),
            },
            "beta_grid": list(self.beta_grid),
            "contamination": None
            if self.contaminated_cell is None
            else {"cell": self.contaminated_cell, "epsilons": list(self.epsilons)},
            "seed": self.seed,
            "replicates": self.replicates,
        }
        return out


# ---------------------------------------------------------------- parsing

def _number(obj, key, where, default=None, required=False):
    if key not in obj or obj[key] is None:
        if required:
            raise ConfigError(f"{where}.{key}" if where else key, "missing required field")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}" if where else key, f"expected a finite number, got {v!r}")
    return v


def _integer(obj, key, where, default=None, required=False):
    v = _number(obj, key, where, default, required)
    if v is not None and int(v) != v:
        raise ConfigError(f"{where}.{key}" if where else key, f"expected an integer, got {v!r}")
    return None if v is None else int(v)


def _number_list(obj, key, where, default=None):
    name = f"{where}.{key}" if where else key
    if key not in obj or obj[key] is None:
        return default
    v = obj[key]
    if not isinstance(v, list) or not v:
        raise ConfigError(name, "expected a nonempty list of numbers")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{name}[{i}]", f"expected a finite number, got {x!r}")
    return tuple(float(x) for x in v)


def _section(data, key):
    v = data.get(key)
    if v is None:
        return None
    if not isinstance(v, dict):
        raise ConfigError(key, "expected an object")
    return v


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ConfigError("kind", f"expected one of {list(KINDS)}, got {kind!r}")

    ds = _section(data, "design")
    if ds is None:
        raise ConfigError("design", "missing required field")
    times = _number_list(ds, "inspection_times", "design")
    if times is None:
        raise ConfigError("design.inspection_times", "missing required field")
    n_units = _integer(ds, "n_units", "design", default=200)
    if n_units < 1:
        raise ConfigError("design.n_units", f"must be a positive integer, got {n_units}")
    try:
        design = StepStressDesign(
            _number(ds, "x1", "design", required=True),
            _number(ds, "x2", "design", required=True),
            _number(ds, "tau", "design", required=True),
            times,
            n_units,
        )
    except ValueError as exc:
        raise ConfigError("design", str(exc)) from None

    theta0 = None
    if data.get("theta") is not None:
        theta0 = _parse_theta(data["theta"], kind)

    noc = _section(data, "noc") or {}
    try:
        query = NocQuery(
            x0=_number(noc, "x0", "noc", default=0.0),
            t0=_number(noc, "t0", "noc", default=0.0),
            p=_number(noc, "p", "noc", default=0.5),
            level=_number(noc, "level", "noc", default=0.95),
        )
    except ValueError as exc:
        raise ConfigError("noc", str(exc)) from None
    quantiles = _number_list(noc, "quantiles", "noc", default=())
    for i, q in enumerate(quantiles):
        if not 0 < q < 1:
            raise ConfigError(f"noc.quantiles[{i}]", f"must lie in (0, 1), got {q}")

    betas = _number_list(data, "beta_grid", "", default=DEFAULT_BETAS)
    for i, b in enumerate(betas):
        if b < 0:
            raise ConfigError(f"beta_grid[{i}]", f"tuning parameter must be >= 0, got {b}")

    cell, epsilons = None, (0.0,)
    cont = _section(data, "contamination")
    if cont is not None:
        cell = _integer(cont, "cell", "contamination", required=True)
        epsilons = _number_list(cont, "epsilons", "contamination", default=DEFAULT_EPSILONS)
        try:
            for e in epsilons:
                ContaminationSpec(cell, e).check_design(design)
        except ValueError as exc:
            raise ConfigError("contamination", str(exc)) from None

    seed = _integer(data, "seed", "", default=0)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    replicates = _integer(data, "replicates", "", default=1000)
    if replicates < 1:
        raise ConfigError("replicates", f"must be >= 1, got {replicates}")

    return ExperimentConfig(
        kind=kind,
        design=design,
        theta0=theta0,
        query=query,
        quantiles=quantiles,
        beta_grid=betas,
        contaminated_cell=cell,
        epsilons=epsilons,
        seed=seed,
        replicates=replicates,
    )


def _parse_theta(raw, kind: str) -> ModelParams:
    names = param_names(kind)
    if isinstance(raw, dict):
        unknown = set(raw) - set(names)
        if unknown:
            raise ConfigError("theta", f"unknown parameters {sorted(unknown)}; expected {names}")
        values = []
        for n in names:
            values.append(_number(raw, n, "theta", required=True))
    elif isinstance(raw, list):
        if len(raw) != len(names):
            raise ConfigError("theta", f"expected {len(names)} values {names}, got {len(raw)}")
        values = list(_number_list({"theta": raw}, "theta", ""))
    else:
        raise ConfigError("theta", "expected an object or a list")
    try:
        return ModelParams(BaselineHazard(kind, tuple(values[:-1])), values[-1])
    except ValueError as exc:
        raise ConfigError("theta", str(exc)) from None


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read configuration: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(data)


# ---------------------------------------------------------------- presets

def _linear_sim() -> dict:
    return {
        "kind": "linear",
        "design": {"x1": 0.5, "x2": 2.5, "tau": 14, "inspection_times": list(range(2, 23, 2)), "n_units": 200},
        "theta": {"gamma0": math.exp(-4.0), "gamma1": math.exp(-5.3), "a1": 0.5},
        "noc": {"x0": 0.3, "t0": 5, "p": 0.5, "level": 0.95},
        "beta_grid": list(DEFAULT_BETAS),
        "contamination": {"cell": 10, "epsilons": list(DEFAULT_EPSILONS)},
        "seed": 20240501,
        "replicates": 1000,
    }


def _quadratic_sim() -> dict:
    return {
        "kind": "quadratic",
        "design": {"x1": 0.5, "x2": 2.5, "tau": 8, "inspection_times": list(range(1, 13)), "n_units": 200},
        "theta": {"gamma0": math.exp(-4.0), "gamma1": 0.0, "gamma2": math.exp(-6.0), "a1": 0.5},
        "noc": {"x0": 0.3, "t0": 5, "p": 0.5, "level": 0.95},
        "beta_grid": list(DEFAULT_BETAS),
        "contamination": {"cell": 11, "epsilons": list(DEFAULT_EPSILONS)},
        "seed": 20240502,
        "replicates": 1000,
    }


def _mos_capacitor() -> dict:
    # Arrhenius stress -1/T[K]: 145 C and 250 C under test, 50 C in use.
    # tau is not given for this design; 150 h is a documented default.
    return {
        "kind": "linear",
        "design": {
            "x1": -2.3914e-3,
            "x2": -1.9114e-3,
            "tau": 150,
            "inspection_times": [40, 60, 90, 110, 130, 150, 170, 183, 190, 210, 220, 250],
            "n_units": 200,
        },
        "theta": {"gamma0": 1e-4, "gamma1": 0.5, "a1": 3800.0},
        "noc": {"x0": -1.0 / (50.0 + 273.15), "t0": 60, "p": 0.5, "level": 0.95},
        "beta_grid": list(DEFAULT_BETAS),
        "contamination": {"cell": 11, "epsilons": list(DEFAULT_EPSILONS)},
        "seed": 20240503,
        "replicates": 1000,
    }


PRESETS = {
    "linear-sim": _linear_sim,
    "quadratic-sim": _quadratic_sim,
    "mos-capacitor": _mos_capacitor,
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return from_dict(PRESETS[name]())


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return PRESETS[name]()
