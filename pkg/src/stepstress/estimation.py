"""Minimum density power divergence estimation for grouped step-stress data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .model import (
    ModelParams,
    NumericalError,
    StepStressDesign,
    _evaluate,
    _poly_cum,
    n_params,
    param_names,
)

log = logging.getLogger(__name__)

# log-space offsets applied to the seed, one row per start: gammas then a1
_START_OFFSETS = (
    (0.0, 0.0),
    (0.7, -0.3),
    (-0.7, 0.3),
    (1.5, 0.0),
    (-1.5, 0.0),
)
_PI_FLOOR = 1e-300


@dataclass(frozen=True)
class GroupedCounts:
    """Failure counts per inspection interval, survivors last."""

    counts: tuple[int, ...]

    def __post_init__(self):
        raw = tuple(self.counts)
        out = []
        for j, n in enumerate(raw, start=1):
            if isinstance(n, bool) or int(n) != n or int(n) < 0:
                raise ValueError(f"count for cell {j} must be a nonnegative integer, got {n!r}")
            out.append(int(n))
        if len(out) < 2:
            raise ValueError("need at least two cells (one interval plus survivors)")
        object.__setattr__(self, "counts", tuple(out))

    @property
    def n_units(self) -> int:
        return sum(self.counts)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=float)

    def check_design(self, design: StepStressDesign) -> None:
        if len(self.counts) != design.n_cells:
            raise ValueError(
                f"counts have {len(self.counts)} cells but the design has {design.n_cells} "
                f"({design.n_inspections} intervals plus survivors)"
            )


def empirical_probs(counts: GroupedCounts) -> np.ndarray:
    """Relative frequencies ``n_j / N``."""
    total = counts.n_units
    if total <= 0:
        raise ValueError("total count N must be positive")
    return counts.as_array() / total


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not math.isfinite(beta) or beta < 0:
        raise ValueError(f"tuning parameter beta must be >= 0, got {beta}")
    return beta


def dpd_loss(p_hat, pi, beta: float) -> float:
    """Density power divergence between ``p_hat`` and the model ``pi``.

    ``beta = 0`` gives the Kullback-Leibler divergence with ``0 log 0 = 0``.
    """
    beta = _check_beta(beta)
    p_hat = np.asarray(p_hat, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if p_hat.shape != pi.shape:
        raise ValueError(f"shape mismatch: p_hat {p_hat.shape} vs pi {pi.shape}")
    if np.any(~(pi > 0)):
        raise ValueError("model probabilities must be strictly positive")
    return _loss(p_hat, pi, beta)


def _loss(p_hat, pi, beta, const=None) -> float:
    if beta == 0.0:
        pos = p_hat > 0
        return float(np.sum(p_hat[pos] * np.log(p_hat[pos] / pi[pos])))
    if const is None:
        const = np.sum(p_hat ** (beta + 1)) / beta
    pib = pi**beta
    return float(np.sum(pib * pi) - (1.0 + 1.0 / beta) * np.sum(pib * p_hat) + const)


def beta_score(params: ModelParams, p_hat, design: StepStressDesign, beta: float) -> np.ndarray:
    """Estimating function ``W^T D^(beta-1) (p_hat - pi)``.

    Equals minus the loss gradient divided by ``beta + 1``.
    """
    beta = _check_beta(beta)
    ev = _evaluate(params.vector, design, jac=True)
    p_hat = np.asarray(p_hat, dtype=float)
    return ev.W.T @ (ev.pi ** (beta - 1.0) * (p_hat - ev.pi))


def _sandwich_parts(pi, W, beta):
    J = W.T @ ((pi ** (beta - 1.0))[:, None] * W)
    v = W.T @ pi**beta
    K = W.T @ ((pi ** (2.0 * beta - 1.0))[:, None] * W) - np.outer(v, v)
    return J, K


def asymptotic_covariance(
    params: ModelParams,
    design: StepStressDesign,
    beta: float,
    n_units: int | None = None,
    max_condition: float = 1e12,
) -> np.ndarray:
    """Sandwich covariance ``J^-1 K J^-1`` of ``sqrt(N)(theta_hat - theta)``.

    With ``n_units`` the finite-sample covariance ``Sigma / N`` is returned.
    The conditioning check is done on the diagonally equilibrated ``J`` so
    that wildly different parameter scales are not mistaken for deficiency.
    """
    beta = _check_beta(beta)
    ev = _evaluate(params.vector, design, jac=True)
    if np.any(~(ev.pi > 0)):
        raise NumericalError("nonpositive cell probability; covariance undefined")
    J, K = _sandwich_parts(ev.pi, ev.W, beta)
    d = np.sqrt(np.diag(J))
    names = param_names(params.kind)
    if np.any(~(d > 0)):
        bad = [names[i] for i in np.flatnonzero(~(d > 0))]
        raise NumericalError(f"information matrix is singular: no information on {bad}")
    Js = J / np.outer(d, d)
    evals, evecs = np.linalg.eigh(Js)
    cond = evals[-1] / evals[0] if evals[0] > 0 else math.inf
    if not cond <= max_condition:
        weakest = names[int(np.argmax(np.abs(evecs[:, 0])))]
        raise NumericalError(
            f"information matrix is ill-conditioned (condition {cond:.3g}); "
            f"deficient direction dominated by {weakest}"
        )
    Jinv = (evecs / evals) @ evecs.T / np.outer(d, d)
    sigma = Jinv @ K @ Jinv
    sigma = 0.5 * (sigma + sigma.T)
    if n_units is not None:
        sigma = sigma / n_units
    return sigma


def wald_ci(
    estimate: float,
    std_error: float,
    level: float = 0.95,
    lower_bound: float | None = None,
    upper_bound: float | None = None,
) -> tuple[float, float]:
    """Normal-approximation interval, clipped to the natural range."""
    if not 0 < level < 1:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    if std_error < 0:
        raise ValueError(f"standard error must be >= 0, got {std_error}")
    z = norm.ppf(0.5 + level / 2.0)
    lo, hi = estimate - z * std_error, estimate + z * std_error
    if lower_bound is not None:
        lo, hi = max(lo, lower_bound), max(hi, lower_bound)
    if upper_bound is not None:
        lo, hi = min(lo, upper_bound), min(hi, upper_bound)
    return float(lo), float(hi)


@dataclass(frozen=True)
class FitOptions:
    gtol: float = 1e-8
    step_tol: float = 1e-10
    max_iter: int = 500
    n_starts: int = 5
    zero_threshold: float = 1e-7
    level: float = 0.95
    covariance: bool = True


@dataclass
class FitResult:
    theta_hat: ModelParams
    beta: float
    loss: float
    score_norm: float
    converged: bool
    iterations: int
    zero_flags: tuple[bool, ...]
    n_units: int
    level: float
    sigma: np.ndarray | None = None
    std_errors: np.ndarray | None = None
    ci: np.ndarray | None = None
    message: str = ""
    theta_raw: np.ndarray | None = None
    start_losses: list[float] = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return param_names(self.theta_hat.kind)

    def to_dict(self) -> dict:
        theta = self.theta_hat.vector
        out = {
            "beta": self.beta,
            "kind": self.theta_hat.kind,
            "n_units": self.n_units,
            "converged": self.converged,
            "iterations": self.iterations,
            "loss": self.loss,
            "score_norm": self.score_norm,
            "message": self.message,
            "level": self.level,
            "estimates": {k: float(v) for k, v in zip(self.names, theta)},
            "zero_flags": {k: bool(z) for k, z in zip(self.names, self.zero_flags)},
        }
        if self.std_errors is not None:
            out["std_errors"] = {k: float(v) for k, v in zip(self.names, self.std_errors)}
            out["ci"] = {k: [float(lo), float(hi)] for k, (lo, hi) in zip(self.names, self.ci)}
            out["sigma"] = [[float(v) for v in row] for row in self.sigma]
        else:
            out["std_errors"] = None
            out["ci"] = None
            out["sigma"] = None
        return out


class _Objective:
    """DPD loss and gradient in log-parameter space, with a small cache."""

    def __init__(self, p_hat, design, beta):
        self.p_hat = p_hat
        self.design = design
        self.beta = beta
        self.const = np.sum(p_hat ** (beta + 1)) / beta if beta > 0 else None
        self.n_eval = 0

    def theta(self, phi):
        return np.exp(np.clip(phi, -700.0, 700.0))

    def __call__(self, phi):
        self.n_eval += 1
        theta = self.theta(phi)
        # the line search may probe extreme points; those are rejected below
        with np.errstate(all="ignore"):
            try:
                ev = _evaluate(theta, self.design, jac=True)
            except (NumericalError, FloatingPointError, OverflowError):
                return 1e100, np.zeros_like(phi)
            pi = np.maximum(ev.pi, _PI_FLOOR)
            loss = _loss(self.p_hat, pi, self.beta, self.const)
            score = ev.W.T @ (pi ** (self.beta - 1.0) * (self.p_hat - pi))
            grad = -(self.beta + 1.0) * score * theta
        if not np.all(np.isfinite(grad)) or not math.isfinite(loss):
            return 1e100, np.zeros_like(phi)
        return loss, grad

    def hessian_guess(self, phi):
        """Expected loss Hessian ``(beta+1) J_beta`` mapped to log space."""
        theta = self.theta(phi)
        try:
            with np.errstate(all="ignore"):
                ev = _evaluate(theta, self.design, jac=True)
        except (NumericalError, FloatingPointError, OverflowError):
            return None
        pi = np.maximum(ev.pi, _PI_FLOOR)
        Wphi = ev.W * theta
        H = (self.beta + 1.0) * Wphi.T @ ((pi ** (self.beta - 1.0))[:, None] * Wphi)
        return H


def _seed(p_hat, design: StepStressDesign, kind: str) -> np.ndarray:
    """Starting point from the empirical cumulative hazard under the first stress.

    Fits the baseline coefficients by nonnegative least squares on the
    cumulative hazard observed before ``tau`` (exponential only when there
    are too few points), inflates zero coefficients to a small share of the
    total hazard, then picks ``a1`` by a 1-D likelihood search.
    """
    m = n_params(kind) - 1
    times = np.asarray(design.inspection_times)
    F = np.cumsum(p_hat[:-1])
    usable = (F > 0) & (F < 1)
    first = usable & (times <= design.tau)
    pts = first if first.any() else usable
    if pts.any():
        t = times[pts]
        H = -np.log1p(-F[pts])
        n_coef = m if pts.sum() >= m else 1
        A = np.column_stack([t ** (i + 1) / (i + 1) for i in range(n_coef)])
        b, _ = optimize.nnls(A, H)
        b = np.concatenate((b, np.zeros(m - n_coef)))
        if not np.any(b > 0):
            b[0] = float(np.sum(t * H) / np.sum(t * t))
        t_ref = float(t[-1])
    else:
        t_ref = float(times[-1])
        b = np.zeros(m)
        b[0] = 1.0 / t_ref
    total = float(_poly_cum(b, t_ref))
    floor = np.array([0.01 * total / (t_ref ** (i + 1) / (i + 1)) for i in range(m)])
    b = np.maximum(b, floor)

    dx = design.x2 - design.x1
    if dx <= 0:
        a1 = 1.0
        return np.log(np.concatenate((b, [a1])))

    def kl(log_delta):
        a1 = math.exp(log_delta) / dx
        scale = -a1 * design.x1
        if abs(scale) > 700:
            return 1e100
        theta = np.concatenate((b * math.exp(scale), [a1]))
        try:
            ev = _evaluate(theta, design, jac=False)
        except NumericalError:
            return 1e100
        return _loss(p_hat, np.maximum(ev.pi, _PI_FLOOR), 0.0)

    res = optimize.minimize_scalar(kl, bounds=(math.log(1e-3), math.log(50.0)), method="bounded")
    a1 = math.exp(res.x) / dx
    gam = b * math.exp(-a1 * design.x1)
    return np.log(np.concatenate((gam, [a1])))


def _bfgs(obj: _Objective, phi0, opts: FitOptions):
    hess_inv0 = None
    H = obj.hessian_guess(phi0)
    if H is not None and np.all(np.isfinite(H)):
        w, V = np.linalg.eigh(H)
        if w[0] > 1e-10 * w[-1] > 0:
            hess_inv0 = (V / w) @ V.T
            hess_inv0 = 0.5 * (hess_inv0 + hess_inv0.T)
            try:
                np.linalg.cholesky(hess_inv0)
            except np.linalg.LinAlgError:
                hess_inv0 = None
    options = {"gtol": opts.gtol, "maxiter": opts.max_iter, "norm": 2.0}
    if hess_inv0 is not None:
        options["hess_inv0"] = hess_inv0
    trail = [np.asarray(phi0, dtype=float)]

    def track(xk):
        trail.append(np.array(xk, dtype=float))

    res = optimize.minimize(obj, phi0, jac=True, method="BFGS", options=options, callback=track)
    res.last_step = float(np.linalg.norm(trail[-1] - trail[-2])) if len(trail) > 1 else math.inf
    return res


def fit_mdpde(
    counts: GroupedCounts,
    design: StepStressDesign,
    kind: str,
    beta: float,
    options: FitOptions | None = None,
) -> FitResult:
    """Minimum DPD estimate of ``theta`` for tuning parameter ``beta``.

    Optimises over ``log(theta)`` with BFGS and the analytic gradient from
    several deterministic starts; keeps the lowest loss.  If the best start
    has not converged, a Nelder-Mead pass followed by another BFGS pass is
    attempted.  Coefficients below ``options.zero_threshold`` are reported
    as zero and flagged.
    """
    opts = options or FitOptions()
    beta = _check_beta(beta)
    counts.check_design(design)
    p_hat = empirical_probs(counts)
    obj = _Objective(p_hat, design, beta)
    seed = _seed(p_hat, design, kind)
    m = len(seed) - 1

    best = None
    start_losses = []
    iterations = 0
    for g_off, a_off in _START_OFFSETS[: max(1, opts.n_starts)]:
        phi0 = seed + np.array([g_off] * m + [a_off])
        res = _bfgs(obj, phi0, opts)
        iterations += int(res.nit)
        start_losses.append(float(res.fun))
        if best is None or res.fun < best.fun:
            best = res

    phi = best.x
    loss, grad = obj(phi)
    gnorm = float(np.linalg.norm(grad))
    converged = gnorm < opts.gtol or _last_step_small(best, opts)
    message = str(best.message)
    # Gauss-Newton refinement: cheap, and removes the residual coordinate
    # error BFGS leaves along weakly identified directions
    phi, loss, grad, step_small = _polish(obj, phi, opts, max_steps=10 if converged else 30,
                                          gtol=0.0 if converged else None)
    gnorm = float(np.linalg.norm(grad))
    if not converged:
        converged = gnorm < opts.gtol or step_small
        if converged:
            message += "; polished by Gauss-Newton steps"
    if not converged:
        nm = optimize.minimize(
            lambda x: obj(x)[0],
            phi,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 200 * len(phi)},
        )
        res = _bfgs(obj, nm.x, opts)
        iterations += int(nm.nit) + int(res.nit)
        if res.fun <= loss:
            phi = res.x
            loss, grad = obj(phi)
            gnorm = float(np.linalg.norm(grad))
            converged = gnorm < opts.gtol or _last_step_small(res, opts)
            message = "nelder-mead fallback: " + str(res.message)
    if not converged:
        log.warning("MDPDE (beta=%g) did not converge: |grad|=%.3g", beta, gnorm)

    theta_raw = obj.theta(phi)
    theta = theta_raw.copy()
    zero = tuple(bool(i < m and theta[i] < opts.zero_threshold) for i in range(m + 1))
    theta[[i for i in range(m) if zero[i]]] = 0.0
    if not np.any(theta[:m] > 0):
        theta = theta_raw.copy()
        zero = (False,) * (m + 1)
    params = ModelParams.from_vector(kind, theta)
    result = FitResult(
        theta_hat=params,
        beta=beta,
        loss=float(loss),
        score_norm=gnorm,
        converged=bool(converged),
        iterations=iterations,
        zero_flags=zero,
        n_units=counts.n_units,
        level=opts.level,
        message=message,
        theta_raw=theta_raw,
        start_losses=start_losses,
    )
    if opts.covariance:
        try:
            sigma = asymptotic_covariance(params, design, beta)
        except NumericalError as exc:
            result.message += f"; covariance unavailable: {exc}"
        else:
            se = np.sqrt(np.clip(np.diag(sigma), 0.0, None) / counts.n_units)
            result.sigma = sigma
            result.std_errors = se
            result.ci = np.array(
                [wald_ci(v, s, opts.level, lower_bound=0.0) for v, s in zip(params.vector, se)]
            )
    return result


def _polish(obj: _Objective, phi, opts: FitOptions, max_steps: int = 30, gtol: float | None = None):
    """Gauss-Newton iterations on the score using the expected Hessian.

    BFGS can stall once loss differences fall below rounding error while the
    gradient is still above tolerance, and on ill-conditioned problems a
    small gradient can still leave visible error in the coordinates.  These
    steps target the gradient directly and accept a step only if it shrinks
    the gradient norm.  ``gtol=0`` iterates until no step helps.
    """
    gtol = opts.gtol if gtol is None else gtol
    loss, grad = obj(phi)
    gnorm = float(np.linalg.norm(grad))
    for _ in range(max_steps):
        if gnorm < gtol or gnorm == 0.0:
            return phi, loss, grad, False
        H = obj.hessian_guess(phi)
        if H is None or not np.all(np.isfinite(H)):
            break
        w, V = np.linalg.eigh(H)
        keep = w > 1e-12 * w[-1]
        if not keep.any():
            break
        step = -(V[:, keep] / w[keep]) @ (V[:, keep].T @ grad)
        for _ in range(30):
            cand = phi + step
            c_loss, c_grad = obj(cand)
            c_norm = float(np.linalg.norm(c_grad))
            if c_loss <= loss + 1e-13 * max(1.0, abs(loss)) and c_norm < gnorm:
                break
            step = 0.5 * step
        else:
            break
        phi, loss, grad, gnorm = cand, c_loss, c_grad, c_norm
        if float(np.linalg.norm(step)) < opts.step_tol:
            return phi, loss, grad, True
    return phi, loss, grad, False


def _last_step_small(res, opts: FitOptions) -> bool:
    # BFGS stops on precision loss once the line search cannot make progress
    return res.status == 2 and res.last_step < opts.step_tol
