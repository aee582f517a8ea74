"""Simple step-stress life model under proportional hazards.

The hazard at constant stress ``x`` is ``h0(t) * exp(a1 * x)`` with a
polynomial baseline ``h0`` of degree one (linear) or two (quadratic).  The
switch from ``x1`` to ``x2`` at ``tau`` follows the cumulative exposure rule,
which is encoded by a nonpositive shifting time ``s`` such that the
cumulative hazard is continuous at ``tau``.

Parameter vectors are always ordered ``(gamma0, gamma1[, gamma2], a1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LINEAR = "linear"
QUADRATIC = "quadratic"
KINDS = (LINEAR, QUADRATIC)
_N_COEF = {LINEAR: 2, QUADRATIC: 3}

_EXP_LIMIT = 700.0


class NumericalError(ArithmeticError):
    """A computation failed for numerical (not input-validation) reasons."""


def n_params(kind: str) -> int:
    """Length of the parameter vector for a baseline kind."""
    return _N_COEF[_check_kind(kind)] + 1


def param_names(kind: str) -> list[str]:
    return [f"gamma{i}" for i in range(_N_COEF[_check_kind(kind)])] + ["a1"]


def _check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}; expected one of {KINDS}")
    return kind


@dataclass(frozen=True)
class BaselineHazard:
    """Polynomial baseline hazard ``gamma0 + gamma1 t (+ gamma2 t^2)``."""

    kind: str
    coefficients: tuple[float, ...]

    def __post_init__(self):
        _check_kind(self.kind)
        coef = tuple(float(c) for c in self.coefficients)
        if len(coef) != _N_COEF[self.kind]:
            raise ValueError(
                f"{self.kind} baseline needs {_N_COEF[self.kind]} coefficients, got {len(coef)}"
            )
        if not all(math.isfinite(c) for c in coef):
            raise ValueError(f"baseline coefficients must be finite, got {coef}")
        if any(c < 0 for c in coef):
            raise ValueError(f"baseline coefficients must be nonnegative, got {coef}")
        if not any(c > 0 for c in coef):
            raise ValueError("at least one baseline coefficient must be strictly positive")
        object.__setattr__(self, "coefficients", coef)

    @classmethod
    def linear(cls, gamma0: float, gamma1: float) -> "BaselineHazard":
        return cls(LINEAR, (gamma0, gamma1))

    @classmethod
    def quadratic(cls, gamma0: float, gamma1: float, gamma2: float) -> "BaselineHazard":
        return cls(QUADRATIC, (gamma0, gamma1, gamma2))

    def rate(self, t):
        return _poly_rate(np.asarray(self.coefficients), t)

    def cumulative(self, t):
        return _poly_cum(np.asarray(self.coefficients), t)


@dataclass(frozen=True)
class ModelParams:
    """Baseline hazard plus the log-linear stress coefficient ``a1``."""

    baseline: BaselineHazard
    a1: float

    def __post_init__(self):
        a1 = float(self.a1)
        if not math.isfinite(a1) or a1 <= 0:
            raise ValueError(f"stress coefficient a1 must be finite and > 0, got {a1}")
        object.__setattr__(self, "a1", a1)

    @property
    def kind(self) -> str:
        return self.baseline.kind

    @property
    def gamma(self) -> tuple[float, ...]:
        return self.baseline.coefficients

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.baseline.coefficients + (self.a1,))

    @classmethod
    def from_vector(cls, kind: str, theta) -> "ModelParams":
        theta = [float(v) for v in np.ravel(theta)]
        if len(theta) != n_params(kind):
            raise ValueError(f"{kind} model needs {n_params(kind)} parameters, got {len(theta)}")
        return cls(BaselineHazard(kind, tuple(theta[:-1])), theta[-1])


@dataclass(frozen=True)
class StepStressDesign:
    """Interval-monitored simple step-stress plan.

    ``inspection_times`` are ``t_1 < ... < t_L``; ``tau`` must be one of them.
    ``n_units`` is the number of devices put on test.
    """

    x1: float
    x2: float
    tau: float
    inspection_times: tuple[float, ...]
    n_units: int = 1

    def __post_init__(self):
        times = tuple(float(t) for t in self.inspection_times)
        if len(times) < 1:
            raise ValueError("at least one inspection time is required")
        if not all(math.isfinite(t) and t > 0 for t in times):
            raise ValueError(f"inspection times must be finite and > 0, got {times}")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"inspection times must be strictly increasing, got {times}")
        x1, x2, tau = float(self.x1), float(self.x2), float(self.tau)
        if not (math.isfinite(x1) and math.isfinite(x2)):
            raise ValueError("stress levels must be finite")
        if x1 > x2:
            raise ValueError(f"stress must not decrease at the change: x1={x1} > x2={x2}")
        hits = [i for i, t in enumerate(times) if math.isclose(t, tau, rel_tol=1e-12, abs_tol=0.0)]
        if not hits:
            raise ValueError(f"tau={tau} is not one of the inspection times {times}")
        n = self.n_units
        if isinstance(n, bool) or int(n) != n or int(n) < 1:
            raise ValueError(f"n_units must be a positive integer, got {n!r}")
        object.__setattr__(self, "inspection_times", times)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "tau", times[hits[0]])
        object.__setattr__(self, "n_units", int(n))

    @property
    def n_inspections(self) -> int:
        return len(self.inspection_times)

    @property
    def n_cells(self) -> int:
        return len(self.inspection_times) + 1

    @property
    def k(self) -> int:
        """1-based index of ``tau`` among the inspection times."""
        return self.inspection_times.index(self.tau) + 1

    def interval_stress(self) -> list[float]:
        """Stress in force during each of the L+1 cells (survivors last)."""
        bounds = (0.0,) + self.inspection_times
        stress = [self.x1 if lo < self.tau else self.x2 for lo in bounds]
        return stress

    def with_units(self, n_units: int) -> "StepStressDesign":
        return StepStressDesign(self.x1, self.x2, self.tau, self.inspection_times, n_units)


def _poly_rate(coef: np.ndarray, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for c in coef[::-1]:
        out = out * t + c
    return out


def _poly_cum(coef: np.ndarray, t):
    # sum_i coef_i t^(i+1) / (i+1)
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for i in range(len(coef) - 1, -1, -1):
        out = out * t + coef[i] / (i + 1)
    return out * t


def _cum_scalar(coef, u: float) -> float:
    out = 0.0
    for i in range(len(coef) - 1, -1, -1):
        out = out * u + coef[i] / (i + 1)
    return out * u


def _rate_scalar(coef, u: float) -> float:
    out = 0.0
    for c in reversed(coef):
        out = out * u + c
    return out


def _scaled(log_factor, value):
    """``exp(log_factor) * value`` without overflowing the exponential."""
    if abs(log_factor) <= _EXP_LIMIT:
        return math.exp(log_factor) * value
    value = np.asarray(value, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(value > 0, np.exp(log_factor + np.log(np.where(value > 0, value, 1.0))), 0.0)


def acceleration_factor(x, a1: float):
    """Multiplicative stress effect ``exp(a1 * x)`` on the hazard."""
    if not math.isfinite(a1):
        raise ValueError(f"a1 must be finite, got {a1}")
    z = a1 * np.asarray(x, dtype=float)
    if np.any(z > _EXP_LIMIT):
        raise OverflowError(f"exp(a1*x) overflows: exponent {float(np.max(z)):.6g}")
    out = np.exp(z)
    return float(out) if out.ndim == 0 else out


def baseline_hazard(t, baseline: BaselineHazard):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("baseline hazard is defined for t >= 0 only")
    out = baseline.rate(t_arr)
    return float(out) if out.ndim == 0 else out


def _invert_cumulative(coef, target: float, hi: float) -> float:
    """Root in (0, hi] of ``P(u) = target`` for the baseline cumulative ``P``.

    ``P`` is strictly increasing on u > 0, so the root is unique whenever
    ``P(hi) >= target``.  Closed form for the linear baseline, otherwise
    Newton safeguarded by bisection.
    """
    coef = [float(c) for c in coef]
    if target <= 0.0:
        return 0.0
    g0, g1 = coef[0], coef[1]
    g2 = coef[2] if len(coef) > 2 else 0.0
    # stable form of the positive quadratic root; also the Newton seed
    u_lin = 2.0 * target / (g0 + math.sqrt(g0 * g0 + 2.0 * g1 * target)) if (g0 > 0 or g1 > 0) else hi
    if g2 == 0.0:
        return u_lin
    lo = 0.0
    u = min(u_lin, hi)
    for _ in range(200):
        f = _cum_scalar(coef, u) - target
        if f == 0.0:
            return u
        if f > 0:
            hi = u
        else:
            lo = u
        df = _rate_scalar(coef, u)
        step = f / df if df > 0 else math.inf
        u_new = u - step
        if not (lo < u_new < hi):
            u_new = 0.5 * (lo + hi)
        if abs(u_new - u) <= 4e-16 * max(u, 1e-300) or hi - lo <= 4e-16 * hi:
            return u_new
        u = u_new
    return u


def _shift_root(coef: np.ndarray, rho: float, tau: float) -> float:
    """Positive root ``u = tau + s`` of ``P(u) = rho * P(tau)``; unique in (0, tau] for rho <= 1."""
    return _invert_cumulative(coef, rho * _cum_scalar([float(c) for c in coef], tau), tau)


@dataclass(frozen=True)
class _Evaluation:
    """Cumulative hazards, reliabilities and their derivatives at t_1..t_L."""

    shift: float
    H: np.ndarray
    R: np.ndarray
    dH: np.ndarray | None
    pi: np.ndarray
    W: np.ndarray | None


def _shift_and_partials(coef, a1, design, jac):
    tau = design.tau
    rho = math.exp(a1 * (design.x1 - design.x2))
    u = _shift_root(coef, rho, tau)
    if not (u > 0.0) or u > tau * (1 + 1e-12):
        raise NumericalError(
            f"no feasible shifting time: tau+s={u!r} (tau={tau}, rho={rho!r}, coefficients={tuple(coef)})"
        )
    if not jac:
        return u, rho, None
    h_u = _rate_scalar([float(c) for c in coef], u)
    if not h_u > 0:
        raise NumericalError(f"baseline hazard vanishes at tau+s={u}")
    m = len(coef)
    ds = np.empty(m + 1)
    for i in range(m):
        ds[i] = (rho * tau ** (i + 1) - u ** (i + 1)) / ((i + 1) * h_u)
    ds[m] = rho * (design.x1 - design.x2) * _cum_scalar([float(c) for c in coef], tau) / h_u
    return u, rho, ds


def _evaluate(theta: np.ndarray, design: StepStressDesign, jac: bool = True) -> _Evaluation:
    theta = np.asarray(theta, dtype=float)
    coef, a1 = theta[:-1], float(theta[-1])
    m = len(coef)
    times = np.asarray(design.inspection_times)
    u, rho, ds = _shift_and_partials(coef, a1, design, jac)
    s = u - design.tau
    first = times <= design.tau
    eff = np.where(first, times, times + s)
    log_c = np.where(first, a1 * design.x1, a1 * design.x2)
    x = np.where(first, design.x1, design.x2)
    P = _poly_cum(coef, eff)
    if np.all(np.abs(log_c) <= _EXP_LIMIT):
        c = np.exp(log_c)
        H = c * P
    else:
        c = None
        with np.errstate(divide="ignore", over="ignore"):
            H = np.where(P > 0, np.exp(log_c + np.log(np.where(P > 0, P, 1.0))), 0.0)
    R = np.exp(-H)
    dH = None
    W = None
    if jac:
        if c is None:
            with np.errstate(over="ignore"):
                c = np.exp(log_c)
        dH = np.empty((len(times), m + 1))
        h_eff = _poly_rate(coef, eff)
        second = ~first
        for i in range(m):
            dH[:, i] = c * (eff ** (i + 1) / (i + 1) + np.where(second, h_eff * ds[i], 0.0))
        dH[:, m] = c * (x * P + np.where(second, h_eff * ds[m], 0.0))
    # pi_j = R(t_{j-1}) * (1 - exp(-(H_j - H_{j-1}))) keeps precision for small cells
    H_prev = np.concatenate(([0.0], H[:-1]))
    R_prev = np.concatenate(([1.0], R[:-1]))
    pi = np.empty(len(times) + 1)
    pi[:-1] = -R_prev * np.expm1(-(H - H_prev))
    pi[-1] = R[-1]
    if jac:
        dR = -R[:, None] * dH
        dR_prev = np.vstack((np.zeros((1, m + 1)), dR[:-1]))
        W = np.vstack((dR_prev - dR, dR[-1:]))
    return _Evaluation(shift=s, H=H, R=R, dH=dH, pi=pi, W=W)


def shifting_time(params: ModelParams, design: StepStressDesign) -> float:
    """Nonpositive shifting time ``s`` enforcing cumulative-exposure continuity."""
    u, _, _ = _shift_and_partials(np.asarray(params.gamma), params.a1, design, jac=False)
    return u - design.tau


def shift_residual(params: ModelParams, design: StepStressDesign, s: float) -> float:
    """Relative residual of the continuity equation at a candidate ``s``."""
    coef = np.asarray(params.gamma)
    rhs = math.exp(params.a1 * (design.x1 - design.x2)) * float(_poly_cum(coef, design.tau))
    return (float(_poly_cum(coef, design.tau + s)) - rhs) / rhs


def cumulative_hazard(t, params: ModelParams, design: StepStressDesign):
    """Step-stress cumulative hazard ``H(t)``; scalar or array ``t >= 0``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("cumulative hazard is defined for t >= 0 only")
    coef = np.asarray(params.gamma)
    a1 = params.a1
    s = shifting_time(params, design)
    first = t_arr <= design.tau
    eff = np.where(first, t_arr, t_arr + s)
    P = _poly_cum(coef, eff)
    H = np.where(
        first,
        _scaled(a1 * design.x1, P),
        _scaled(a1 * design.x2, P),
    )
    return float(H) if H.ndim == 0 else H


def step_reliability(t, params: ModelParams, design: StepStressDesign):
    out = np.exp(-np.asarray(cumulative_hazard(t, params, design)))
    return float(out) if out.ndim == 0 else out


def cell_probabilities(params: ModelParams, design: StepStressDesign) -> np.ndarray:
    """Multinomial cell probabilities ``pi_1..pi_{L+1}`` (survivors last)."""
    ev = _evaluate(params.vector, design, jac=False)
    _check_probabilities(ev.pi)
    return ev.pi


def cell_prob_jacobian(params: ModelParams, design: StepStressDesign) -> np.ndarray:
    """(L+1) x p matrix whose row j is the gradient of ``pi_j`` in theta."""
    ev = _evaluate(params.vector, design, jac=True)
    _check_probabilities(ev.pi)
    return ev.W


def _check_probabilities(pi: np.ndarray) -> None:
    bad = np.flatnonzero(~(pi > 0))
    if bad.size:
        raise NumericalError(
            f"nonpositive cell probabilities at cells {[int(j) + 1 for j in bad]}: {pi[bad]}"
        )
