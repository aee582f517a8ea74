"""Lifetime characteristics at a constant use-level stress ``x0``.

At constant stress the reliability is ``R(t) = exp(-c P(t))`` with
``c = exp(a1 x0)`` and ``P`` the baseline cumulative hazard.  Every quantity
comes with its analytic gradient in ``theta`` so that delta-method standard
errors follow from a parameter covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .estimation import wald_ci
from .model import (
    LINEAR,
    ModelParams,
    NumericalError,
    _cum_scalar,
    _invert_cumulative,
    _rate_scalar,
    acceleration_factor,
)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_SERIES_SWITCH = 15.0  # u above which the Mills-ratio series replaces erfcx
_QUAD_RTOL = 1e-10


@dataclass(frozen=True)
class NocQuery:
    """Use-level stress and the points at which characteristics are wanted."""

    x0: float
    t0: float = 0.0
    p: float = 0.5
    level: float = 0.95

    def __post_init__(self):
        if not math.isfinite(self.x0):
            raise ValueError(f"x0 must be finite, got {self.x0}")
        if not (self.t0 >= 0 and math.isfinite(self.t0)):
            raise ValueError(f"mission time t0 must be finite and >= 0, got {self.t0}")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"probability p must lie in (0, 1), got {self.p}")
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")


@dataclass(frozen=True)
class CharacteristicEstimate:
    name: str
    value: float
    gradient: np.ndarray = field(repr=False)
    std_error: float | None = None
    ci: tuple[float, float] | None = None
    level: float | None = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "ci": None if self.ci is None else list(self.ci),
            "level": self.level,
            "gradient": [float(g) for g in self.gradient],
        }


def _coef(params: ModelParams) -> list[float]:
    return [float(c) for c in params.gamma]


def _stress_factor(params: ModelParams, x0: float) -> float:
    return acceleration_factor(x0, params.a1)


def _check_nonzero(coef) -> None:
    if not any(c > 0 for c in coef):
        raise ValueError("all baseline coefficients are zero; the lifetime is infinite")


# ---------------------------------------------------------------- mean lifetime

def _mills_series(w: float) -> tuple[float, float]:
    """``S(w) = sum_k (-1)^k (2k-1)!! w^k`` and ``S'(w)`` for small ``w = 1/u^2``.

    ``exp(u^2/2) Phi(-u) = S(1/u^2) / (u sqrt(2 pi))``; the asymptotic series
    is accurate to double precision for u >= 15 with 12 terms.
    """
    s, ds = 0.0, 0.0
    term = 1.0  # (-1)^k (2k-1)!! w^k
    for k in range(12):
        s += term
        if k > 0:
            ds += k * term / w if w > 0 else 0.0
        term *= -(2 * k + 1) * w
    if w == 0.0:
        ds = -1.0
    return s, ds


def _linear_mean(g0: float, g1: float, c: float, x0: float, grad: bool):
    if g1 > 0:
        u = g0 * math.sqrt(c / g1)
    if g1 == 0 or u > _SERIES_SWITCH:
        # E = S(w) / (c g0) with w = g1 / (c g0^2); covers the exponential limit
        w = g1 / (c * g0 * g0)
        s, ds = _mills_series(w)
        mean = s / (c * g0)
        if not grad:
            return mean, None
        b = ds / (c * g0)
        return mean, np.array([
            -mean / g0 - 2.0 * b * w / g0,
            b / (c * g0 * g0),
            x0 * (-mean - b * w),
        ])
    a = math.sqrt(2.0 * math.pi / (g1 * c))
    m = 0.5 * special.erfcx(u * _INV_SQRT2)  # exp(u^2/2) Phi(-u)
    mean = a * m
    if not grad:
        return mean, None
    dm = u * m - _INV_SQRT_2PI
    return mean, np.array([
        a * dm * math.sqrt(c / g1),
        -mean / (2.0 * g1) - a * dm * u / (2.0 * g1),
        x0 * (-0.5 * mean + 0.5 * a * dm * u),
    ])


def _integrate_tail(fn, scale: float, what: str) -> float:
    """``int_0^inf fn(t) dt`` via ``t = scale u / (1 - u)`` on (0, 1)."""

    def mapped(u):
        if u >= 1.0:
            return 0.0
        one = 1.0 - u
        return fn(scale * u / one) * scale / (one * one)

    val, err, info = integrate.quad(
        mapped, 0.0, 1.0, epsabs=0.0, epsrel=_QUAD_RTOL, limit=500, full_output=True
    )[:3]
    if not math.isfinite(val) or err > 1e-8 * max(abs(val), 1e-300):
        raise NumericalError(
            f"quadrature for {what} did not converge: estimate {val!r}, "
            f"achieved absolute error {err:.3g} ({info.get('last', '?')} subintervals)"
        )
    return val


def _numeric_mean(coef, c: float, x0: float, grad: bool):
    scale = _quantile_value(coef, c, 0.5)

    def rel(t):
        return math.exp(-c * _cum_scalar(coef, t))

    mean = _integrate_tail(rel, scale, "mean lifetime")
    if not grad:
        return mean, None
    g = np.empty(len(coef) + 1)
    for i in range(len(coef)):
        k = i + 1
        g[i] = -c * _integrate_tail(lambda t, k=k: t**k / k * rel(t), scale, f"dE/dgamma{i}")
    g[-1] = x0 * float(np.dot(coef, g[:-1]))
    return mean, g


def mean_lifetime(params: ModelParams, x0: float) -> float:
    """Expected lifetime at constant stress ``x0``."""
    coef = _coef(params)
    _check_nonzero(coef)
    c = _stress_factor(params, x0)
    if params.kind == LINEAR:
        return _linear_mean(coef[0], coef[1], c, x0, False)[0]
    return _numeric_mean(coef, c, x0, False)[0]


def mean_lifetime_gradient(params: ModelParams, x0: float) -> np.ndarray:
    coef = _coef(params)
    _check_nonzero(coef)
    c = _stress_factor(params, x0)
    if params.kind == LINEAR:
        return _linear_mean(coef[0], coef[1], c, x0, True)[1]
    return _numeric_mean(coef, c, x0, True)[1]


# ---------------------------------------------------------------- quantiles

def _quantile_value(coef, c: float, p: float) -> float:
    target = -math.log1p(-p) / c
    # P(t) >= gamma_i t^(i+1)/(i+1) for every i, so this bounds the root
    hi = min(((i + 1) * target / g) ** (1.0 / (i + 1)) for i, g in enumerate(coef) if g > 0)
    return _invert_cumulative(coef, target, hi)


def quantile(params: ModelParams, p: float, x0: float) -> float:
    """Time ``Q`` with ``F(Q) = p`` at constant stress ``x0``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability p must lie in (0, 1), got {p}")
    coef = _coef(params)
    _check_nonzero(coef)
    return _quantile_value(coef, _stress_factor(params, x0), p)


def quantile_gradient(params: ModelParams, p: float, x0: float) -> np.ndarray:
    q = quantile(params, p, x0)
    coef = _coef(params)
    h = _rate_scalar(coef, q)
    if not h > 0:
        raise NumericalError(f"baseline hazard vanishes at the quantile Q={q}")
    g = [-(q ** (i + 1)) / ((i + 1) * h) for i in range(len(coef))]
    g.append(-x0 * _cum_scalar(coef, q) / h)
    return np.array(g)


# ---------------------------------------------------------------- reliability and hazard

def _check_time(t0: float) -> float:
    t0 = float(t0)
    if not (t0 >= 0 and math.isfinite(t0)):
        raise ValueError(f"mission time t0 must be finite and >= 0, got {t0}")
    return t0


def reliability_value(params: ModelParams, t0: float, x0: float) -> float:
    t0 = _check_time(t0)
    return math.exp(-_stress_factor(params, x0) * _cum_scalar(_coef(params), t0))


def reliability_gradient(params: ModelParams, t0: float, x0: float) -> np.ndarray:
    t0 = _check_time(t0)
    coef = _coef(params)
    c = _stress_factor(params, x0)
    cum = _cum_scalar(coef, t0)
    r = math.exp(-c * cum)
    g = [t0 ** (i + 1) / (i + 1) for i in range(len(coef))] + [cum * x0]
    return -r * c * np.array(g)


def hazard_value(params: ModelParams, t0: float, x0: float) -> float:
    t0 = _check_time(t0)
    return _stress_factor(params, x0) * _rate_scalar(_coef(params), t0)


def hazard_gradient(params: ModelParams, t0: float, x0: float) -> np.ndarray:
    t0 = _check_time(t0)
    coef = _coef(params)
    c = _stress_factor(params, x0)
    g = [t0**i for i in range(len(coef))] + [_rate_scalar(coef, t0) * x0]
    return c * np.array(g)


# ---------------------------------------------------------------- delta method

def characteristic_ci(
    value: float,
    gradient,
    sigma,
    n_units: int,
    level: float = 0.95,
    bounds: tuple[float | None, float | None] = (None, None),
) -> tuple[float, tuple[float, float]]:
    """Delta-method standard error and truncated Wald interval.

    ``sigma`` is the asymptotic covariance of ``sqrt(N) (theta_hat - theta)``,
    so the variance of the characteristic is ``g' sigma g / N``.
    """
    g = np.asarray(gradient, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (g.size, g.size):
        raise ValueError(f"covariance shape {sigma.shape} does not match gradient length {g.size}")
    if n_units <= 0:
        raise ValueError(f"n_units must be positive, got {n_units}")
    var = float(g @ sigma @ g) / n_units
    scale = float(np.abs(g) @ np.abs(sigma) @ np.abs(g)) / n_units
    if var < -1e-12 * max(scale, 1.0):
        raise ValueError(f"negative delta-method variance {var:.3g}; covariance is not PSD")
    se = math.sqrt(max(var, 0.0))
    return se, wald_ci(value, se, level, lower_bound=bounds[0], upper_bound=bounds[1])


def _estimate(name, value, grad, sigma, n_units, level, bounds) -> CharacteristicEstimate:
    if sigma is None:
        return CharacteristicEstimate(name, float(value), grad)
    if n_units is None:
        raise ValueError("n_units is required together with sigma")
    se, ci = characteristic_ci(value, grad, sigma, n_units, level, bounds)
    return CharacteristicEstimate(name, float(value), grad, se, ci, level)


def mean_estimate(params, x0, sigma=None, n_units=None, level=0.95) -> CharacteristicEstimate:
    coef = _coef(params)
    _check_nonzero(coef)
    c = _stress_factor(params, x0)
    if params.kind == LINEAR:
        value, grad = _linear_mean(coef[0], coef[1], c, x0, True)
    else:
        value, grad = _numeric_mean(coef, c, x0, True)
    return _estimate("mean", value, grad, sigma, n_units, level, (0.0, None))


def quantile_estimate(params, p, x0, sigma=None, n_units=None, level=0.95, name=None) -> CharacteristicEstimate:
    return _estimate(
        name or f"quantile_{p:g}", quantile(params, p, x0), quantile_gradient(params, p, x0),
        sigma, n_units, level, (0.0, None),
    )


def reliability_at(params, t0, x0, sigma=None, n_units=None, level=0.95) -> CharacteristicEstimate:
    """Reliability ``R(t0)`` at stress ``x0``; interval truncated to [0, 1]."""
    return _estimate(
        "reliability", reliability_value(params, t0, x0), reliability_gradient(params, t0, x0),
        sigma, n_units, level, (0.0, 1.0),
    )


def hazard_rate_at(params, t0, x0, sigma=None, n_units=None, level=0.95) -> CharacteristicEstimate:
    """Hazard ``h0(t0) exp(a1 x0)``; interval truncated at zero."""
    return _estimate(
        "hazard", hazard_value(params, t0, x0), hazard_gradient(params, t0, x0),
        sigma, n_units, level, (0.0, None),
    )


def characterize(
    params: ModelParams,
    query: NocQuery,
    sigma=None,
    n_units: int | None = None,
    quantiles=(),
) -> dict[str, CharacteristicEstimate]:
    """Mean, median, extra quantiles, reliability and hazard at ``query``."""
    kw = dict(sigma=sigma, n_units=n_units, level=query.level)
    out = {
        "mean": mean_estimate(params, query.x0, **kw),
        "median": quantile_estimate(params, 0.5, query.x0, name="median", **kw),
    }
    for p in sorted(set(float(p) for p in quantiles) | {query.p}):
        out[f"quantile_{p:g}"] = quantile_estimate(params, p, query.x0, **kw)
    out["reliability"] = reliability_at(params, query.t0, query.x0, **kw)
    out["hazard"] = hazard_rate_at(params, query.t0, query.x0, **kw)
    return out
