"""Data generation, adjusted residuals and seeded Monte Carlo RMSE studies.

Counts are drawn with the sequential binomial scheme: survivors at the left
end of each interval fail inside it with the conditional probability
``q_j = pi_j / R(t_{j-1})``.  Contamination inflates ``q`` at one cell by a
factor ``1 + epsilon``.

Every replicate gets its own RNG stream derived from the master seed and the
replicate index only, so results do not depend on scheduling or on the
number of worker processes.  The same stream is reused across contamination
strengths (common random numbers).
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import characteristics as ch
from .estimation import FitOptions, GroupedCounts, empirical_probs, fit_mdpde
from .model import ModelParams, StepStressDesign, _evaluate, param_names

log = logging.getLogger(__name__)

CHARACTERISTICS = ("median", "mean", "hazard", "reliability")
FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class ContaminationSpec:
    """Inflate the conditional failure probability of ``cell`` (1-based)."""

    cell: int
    epsilon: float

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if int(self.cell) != self.cell or self.cell < 1:
            raise ValueError(f"contaminated cell must be a positive integer, got {self.cell}")

    def check_design(self, design: StepStressDesign) -> None:
        if self.cell > design.n_inspections:
            raise ValueError(
                f"contaminated cell {self.cell} must be an inspection interval 1..{design.n_inspections}"
            )


def conditional_probabilities(
    params: ModelParams, design: StepStressDesign, contamination: ContaminationSpec | None = None
) -> tuple[np.ndarray, bool]:
    """Per-interval failure probabilities given survival to the interval start.

    Returns ``(q, clamped)`` where ``clamped`` tells whether the contaminated
    probability exceeded one and was cut back to one.
    """
    ev = _evaluate(params.vector, design, jac=False)
    H = np.concatenate(([0.0], ev.H))
    q = -np.expm1(-np.diff(H))
    clamped = False
    if contamination is not None and contamination.epsilon > 0:
        contamination.check_design(design)
        j = contamination.cell - 1
        inflated = q[j] * (1.0 + contamination.epsilon)
        clamped = inflated > 1.0
        q[j] = min(inflated, 1.0)
    return q, bool(clamped)


def _draw(q: np.ndarray, n_units: int, rng: np.random.Generator) -> GroupedCounts:
    counts = []
    remaining = n_units
    for qj in q:
        n = int(rng.binomial(remaining, qj)) if remaining > 0 else 0
        counts.append(n)
        remaining -= n
    counts.append(remaining)
    return GroupedCounts(tuple(counts))


def generate_counts(
    params: ModelParams,
    design: StepStressDesign,
    contamination: ContaminationSpec | None = None,
    seed=None,
    n_units: int | None = None,
) -> GroupedCounts:
    """Sequential binomial sample of ``n_units`` (default ``design.n_units``) units.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    n = design.n_units if n_units is None else int(n_units)
    if n < 1:
        raise ValueError(f"number of units must be positive, got {n}")
    q, _ = conditional_probabilities(params, design, contamination)
    return _draw(q, n, np.random.default_rng(seed))


def adjusted_residuals(counts: GroupedCounts, params: ModelParams, design: StepStressDesign) -> np.ndarray:
    """``sqrt(N) (p_hat - pi) / sqrt(pi (1 - pi))`` per cell."""
    counts.check_design(design)
    pi = _evaluate(params.vector, design, jac=False).pi
    v = pi * (1.0 - pi)
    if np.any(v <= 0):
        raise ValueError("a cell probability is 0 or 1; adjusted residuals are undefined")
    return math.sqrt(counts.n_units) * (empirical_probs(counts) - pi) / np.sqrt(v)


# ---------------------------------------------------------------- Monte Carlo driver

@dataclass(frozen=True)
class SimulationConfig:
    theta0: ModelParams
    design: StepStressDesign
    query: ch.NocQuery
    beta_grid: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    epsilons: tuple[float, ...] = (0.0,)
    contaminated_cell: int | None = None
    replicates: int = 1000
    master_seed: int = 0
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        if not self.beta_grid or any(not (b >= 0 and math.isfinite(b)) for b in self.beta_grid):
            raise ValueError(f"beta grid must be nonempty and nonnegative, got {self.beta_grid}")
        if not self.epsilons:
            raise ValueError("epsilon grid must be nonempty")
        if any(e > 0 for e in self.epsilons) and self.contaminated_cell is None:
            raise ValueError("a contaminated cell is required when any epsilon > 0")
        for e in self.epsilons:
            self.contamination(e)
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master seed must be a 64-bit unsigned integer")

    def contamination(self, epsilon: float) -> ContaminationSpec | None:
        if self.contaminated_cell is None:
            if epsilon != 0:
                raise ValueError("epsilon > 0 needs a contaminated cell")
            return None
        spec = ContaminationSpec(self.contaminated_cell, float(epsilon))
        spec.check_design(self.design)
        return spec


def replicate_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def _characteristic_values(params: ModelParams, query: ch.NocQuery) -> np.ndarray:
    return np.array([
        ch.quantile(params, 0.5, query.x0),
        ch.mean_lifetime(params, query.x0),
        ch.hazard_value(params, query.t0, query.x0),
        ch.reliability_value(params, query.t0, query.x0),
    ])


def _run_replicate(cfg: SimulationConfig, index: int) -> dict:
    """Fit every (epsilon, beta) pair for one replicate."""
    p = len(cfg.theta0.vector)
    ne, nb = len(cfg.epsilons), len(cfg.beta_grid)
    out = {
        "theta": np.full((ne, nb, p), np.nan),
        "covered": np.zeros((ne, nb, p), dtype=bool),
        "has_ci": np.zeros((ne, nb), dtype=bool),
        "chars": np.full((ne, nb, len(CHARACTERISTICS)), np.nan),
        "ok": np.zeros((ne, nb), dtype=bool),
        "residuals": np.full((ne, cfg.design.n_cells), np.nan),
        "errors": [],
    }
    truth = cfg.theta0.vector
    for e, eps in enumerate(cfg.epsilons):
        spec = cfg.contamination(eps)
        counts = generate_counts(cfg.theta0, cfg.design, spec, replicate_seed(cfg.master_seed, index))
        out["residuals"][e] = adjusted_residuals(counts, cfg.theta0, cfg.design)
        for b, beta in enumerate(cfg.beta_grid):
            try:
                fit = fit_mdpde(counts, cfg.design, cfg.theta0.kind, beta, cfg.fit_options)
            except Exception as exc:  # recorded, never fatal
                out["errors"].append(f"replicate {index} eps={eps:g} beta={beta:g}: {exc}")
                continue
            out["theta"][e, b] = fit.theta_hat.vector
            out["ok"][e, b] = fit.converged
            if not fit.converged:
                out["errors"].append(
                    f"replicate {index} eps={eps:g} beta={beta:g}: not converged ({fit.message})"
                )
            if fit.ci is not None:
                out["has_ci"][e, b] = True
                out["covered"][e, b] = (fit.ci[:, 0] <= truth) & (truth <= fit.ci[:, 1])
            try:
                out["chars"][e, b] = _characteristic_values(fit.theta_hat, cfg.query)
            except (ValueError, ArithmeticError) as exc:
                out["errors"].append(f"replicate {index} eps={eps:g} beta={beta:g}: characteristics: {exc}")
    return out


def _run_chunk(cfg: SimulationConfig, indices: list[int]) -> list[dict]:
    return [_run_replicate(cfg, i) for i in indices]


@dataclass
class MonteCarloReport:
    config: SimulationConfig
    truth_characteristics: np.ndarray
    clamped: dict[float, bool]
    theta: np.ndarray  # (eps, beta, replicate, p)
    chars: np.ndarray  # (eps, beta, replicate, 4)
    ok: np.ndarray  # (eps, beta, replicate)
    covered: np.ndarray
    has_ci: np.ndarray
    residuals: np.ndarray  # (eps, replicate, cells)
    errors: list[str]

    @property
    def param_names(self) -> list[str]:
        return param_names(self.config.theta0.kind)

    def failures(self, e: int, b: int) -> int:
        return int(np.sum(~self.ok[e, b]))

    def flagged(self) -> bool:
        return any(
            self.failures(e, b) > FAILURE_LIMIT * self.config.replicates
            for e in range(len(self.config.epsilons))
            for b in range(len(self.config.beta_grid))
        )

    def rmse(self, e: int, b: int) -> dict[str, float]:
        ok = self.ok[e, b]
        out = {}
        err = self.theta[e, b][ok] - self.config.theta0.vector
        for k, name in enumerate(self.param_names):
            out[name] = _rms(err[:, k])
        cerr = self.chars[e, b][ok] - self.truth_characteristics
        for k, name in enumerate(CHARACTERISTICS):
            out[name] = _rms(cerr[:, k])
        return out

    def mean_estimates(self, e: int, b: int) -> dict[str, float]:
        ok = self.ok[e, b]
        return {
            name: float(np.mean(self.theta[e, b][ok, k])) if ok.any() else math.nan
            for k, name in enumerate(self.param_names)
        }

    def coverage(self, e: int, b: int) -> dict[str, float] | None:
        use = self.ok[e, b] & self.has_ci[e, b]
        if not use.any():
            return None
        return {name: float(np.mean(self.covered[e, b][use, k])) for k, name in enumerate(self.param_names)}

    def mean_residuals(self) -> np.ndarray:
        return self.residuals.mean(axis=1)

    def to_dict(self) -> dict:
        cfg = self.config
        results = []
        for e, eps in enumerate(cfg.epsilons):
            for b, beta in enumerate(cfg.beta_grid):
                n_fail = self.failures(e, b)
                results.append({
                    "beta": float(beta),
                    "epsilon": float(eps),
                    "n_failed": n_fail,
                    "failure_rate": n_fail / cfg.replicates,
                    "flagged": n_fail > FAILURE_LIMIT * cfg.replicates,
                    "n_missing_characteristics": int(np.sum(np.isnan(self.chars[e, b][self.ok[e, b]]).any(axis=1))),
                    "mean_estimates": self.mean_estimates(e, b),
                    "rmse": self.rmse(e, b),
                    "ci_coverage": self.coverage(e, b),
                })
        mean_res = self.mean_residuals()
        return {
            "config": config_to_dict(cfg),
            "truth": {
                "theta": dict(zip(self.param_names, map(float, cfg.theta0.vector))),
                "characteristics": dict(zip(CHARACTERISTICS, map(float, self.truth_characteristics))),
            },
            "contamination_clamped": {f"{eps:g}": self.clamped[eps] for eps in cfg.epsilons},
            "flagged": self.flagged(),
            "results": results,
            "mean_residuals": [
                {"epsilon": float(eps), "residuals": [float(r) for r in mean_res[e]]}
                for e, eps in enumerate(cfg.epsilons)
            ],
            "n_errors": len(self.errors),
            "errors": self.errors[:50],
        }

    def rmse_rows(self) -> list[tuple[float, float, str, float]]:
        rows = []
        for e, eps in enumerate(self.config.epsilons):
            for b, beta in enumerate(self.config.beta_grid):
                for target, val in self.rmse(e, b).items():
                    rows.append((float(beta), float(eps), target, val))
        return rows

    def residual_rows(self) -> list[tuple[float, int, float]]:
        mean_res = self.mean_residuals()
        return [
            (float(eps), j + 1, float(r))
            for e, eps in enumerate(self.config.epsilons)
            for j, r in enumerate(mean_res[e])
        ]


def _rms(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(np.sqrt(np.mean(x * x))) if x.size else math.nan


def config_to_dict(cfg: SimulationConfig) -> dict:
    d = cfg.design
    return {
        "kind": cfg.theta0.kind,
        "theta0": [float(v) for v in cfg.theta0.vector],
        "design": {
            "x1": d.x1,
            "x2": d.x2,
            "tau": d.tau,
            "inspection_times": list(d.inspection_times),
            "n_units": d.n_units,
        },
        "noc": {"x0": cfg.query.x0, "t0": cfg.query.t0, "p": cfg.query.p, "level": cfg.query.level},
        "beta_grid": [float(b) for b in cfg.beta_grid],
        "epsilons": [float(e) for e in cfg.epsilons],
        "contaminated_cell": cfg.contaminated_cell,
        "replicates": cfg.replicates,
        "master_seed": cfg.master_seed,
    }


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def rmse_study(config: SimulationConfig, threads: int = 1) -> MonteCarloReport:
    """Fit every replicate for every (epsilon, beta) pair and collect errors.

    ``threads > 1`` spreads replicates over worker processes; the report is
    identical for any worker count.
    """
    cfg = config
    R = cfg.replicates
    indices = list(range(R))
    if threads > 1 and R > 1:
        n_chunks = min(R, threads * 4)
        chunks = [indices[k::n_chunks] for k in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, [cfg] * len(chunks), chunks))
        by_index = {}
        for chunk, part in zip(chunks, parts):
            by_index.update(zip(chunk, part))
        reps = [by_index[i] for i in indices]
    else:
        reps = _run_chunk(cfg, indices)

    errors = [msg for r in reps for msg in r["errors"]]
    if errors:
        log.info("%d replicate issues recorded", len(errors))
    clamped = {eps: conditional_probabilities(cfg.theta0, cfg.design, cfg.contamination(eps))[1]
               for eps in cfg.epsilons}
    report = MonteCarloReport(
        config=cfg,
        truth_characteristics=_characteristic_values(cfg.theta0, cfg.query),
        clamped=clamped,
        theta=np.stack([r["theta"] for r in reps], axis=2),
        chars=np.stack([r["chars"] for r in reps], axis=2),
        ok=np.stack([r["ok"] for r in reps], axis=2),
        covered=np.stack([r["covered"] for r in reps], axis=2),
        has_ci=np.stack([r["has_ci"] for r in reps], axis=2),
        residuals=np.stack([r["residuals"] for r in reps], axis=1),
        errors=errors,
    )
    if report.flagged():
        log.warning("more than %.0f%% of replicate fits failed for some (beta, epsilon)", 100 * FAILURE_LIMIT)
    return report
