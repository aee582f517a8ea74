import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stepstress.model import (
    BaselineHazard,
    ModelParams,
    NumericalError,
    StepStressDesign,
    acceleration_factor,
    baseline_hazard,
    cell_prob_jacobian,
    cell_probabilities,
    cumulative_hazard,
    n_params,
    param_names,
    shift_residual,
    shifting_time,
    step_reliability,
)

from conftest import LINEAR_THETA, QUADRATIC_THETA, linear_design, quadratic_design, random_case
from oracles import (
    cell_probs_by_quadrature,
    central_diff,
    hazard_by_quadrature,
    shift_by_bisection,
    shift_by_roots,
)


def col_rel_err(a, b):
    """Largest column-wise error relative to the column's largest entry."""
    scale = np.maximum(np.max(np.abs(b), axis=0), 1e-300)
    return float(np.max(np.max(np.abs(a - b), axis=0) / scale))


# ---------------------------------------------------------------- types

def test_baseline_validation():
    with pytest.raises(ValueError):
        BaselineHazard.linear(-1e-3, 0.1)
    with pytest.raises(ValueError):
        BaselineHazard.linear(0.0, 0.0)
    with pytest.raises(ValueError):
        BaselineHazard("linear", (0.1, 0.2, 0.3))
    with pytest.raises(ValueError):
        BaselineHazard("cubic", (0.1, 0.2, 0.3, 0.4))
    with pytest.raises(ValueError):
        BaselineHazard.linear(float("nan"), 0.1)


def test_params_validation_and_vector():
    p = ModelParams.from_vector("quadratic", [0.1, 0.0, 0.02, 0.7])
    assert p.kind == "quadratic"
    np.testing.assert_array_equal(p.vector, [0.1, 0.0, 0.02, 0.7])
    assert param_names("quadratic") == ["gamma0", "gamma1", "gamma2", "a1"]
    assert n_params("linear") == 3
    with pytest.raises(ValueError):
        ModelParams(BaselineHazard.linear(0.1, 0.1), 0.0)
    with pytest.raises(ValueError):
        ModelParams.from_vector("linear", [0.1, 0.1])


def test_design_validation():
    with pytest.raises(ValueError):
        StepStressDesign(0.5, 2.5, 5.0, (2, 4, 6))  # tau not an inspection time
    with pytest.raises(ValueError):
        StepStressDesign(0.5, 2.5, 4.0, (2, 4, 4, 6))
    with pytest.raises(ValueError):
        StepStressDesign(2.5, 0.5, 4.0, (2, 4, 6))
    with pytest.raises(ValueError):
        StepStressDesign(0.5, 2.5, 4.0, (2, 4, 6), n_units=0)
    d = linear_design()
    assert d.n_cells == 12 and d.k == 7
    assert d.interval_stress()[:7] == [0.5] * 7 and d.interval_stress()[7:] == [2.5] * 5


# ---------------------------------------------------------------- scalar examples

def test_acceleration_factor_examples():
    assert acceleration_factor(0.0, 0.5) == 1.0
    assert acceleration_factor(0.5, 0.5) == pytest.approx(1.2840254166877414, rel=1e-15)
    series = sum(0.25**k / math.factorial(k) for k in range(30))
    assert acceleration_factor(0.5, 0.5) == pytest.approx(series, rel=1e-15)
    assert acceleration_factor(-2.3914e-3, 3800.0) == pytest.approx(math.exp(-9.08732), rel=1e-12)
    assert acceleration_factor(-2.3914e-3, 3800.0) == pytest.approx(1.1309e-4, rel=1e-4)


def test_acceleration_factor_overflow():
    with pytest.raises(OverflowError, match="exponent"):
        acceleration_factor(10.0, 100.0)


def test_baseline_hazard_examples():
    lin = BaselineHazard.linear(math.exp(-4), math.exp(-5.3))
    quad = BaselineHazard.quadratic(math.exp(-4), 0.0, math.exp(-6))
    assert baseline_hazard(0.0, lin) == math.exp(-4)
    # direct evaluation: 0.0282988 and 0.0406244
    assert baseline_hazard(2.0, lin) == pytest.approx(math.exp(-4) + 2 * math.exp(-5.3), rel=1e-15)
    assert baseline_hazard(2.0, lin) == pytest.approx(0.0282988, abs=5e-8)
    assert baseline_hazard(3.0, quad) == pytest.approx(0.0406244, abs=5e-8)
    with pytest.raises(ValueError):
        baseline_hazard(-1.0, lin)


# ---------------------------------------------------------------- shifting time

def test_shift_linear_scenario_against_oracles(linear_case):
    p, d = linear_case
    s = shifting_time(p, d)
    assert s == pytest.approx(shift_by_bisection(LINEAR_THETA, 0.5, 2.5, 14.0), rel=1e-12)
    assert s == pytest.approx(shift_by_roots(LINEAR_THETA, 0.5, 2.5, 14.0), rel=1e-12)
    assert s == pytest.approx(-6.56235491407014, rel=1e-12)
    assert abs(shift_residual(p, d, s)) < 1e-14


def test_shift_quadratic_scenario_against_oracles(quadratic_case):
    p, d = quadratic_case
    s = shifting_time(p, d)
    assert s == pytest.approx(shift_by_bisection(QUADRATIC_THETA, 0.5, 2.5, 8.0), rel=1e-12)
    assert s == pytest.approx(shift_by_roots(QUADRATIC_THETA, 0.5, 2.5, 8.0), rel=1e-10)
    assert -8.0 < s < 0


def test_shift_equal_stresses_is_zero():
    p = ModelParams.from_vector("linear", LINEAR_THETA)
    d = StepStressDesign(1.0, 1.0, 4.0, (2, 4, 6))
    assert shifting_time(p, d) == 0.0


def test_shift_exponential_baseline_closed_form():
    p = ModelParams.from_vector("linear", (0.05, 0.0, 0.8))
    d = StepStressDesign(0.5, 2.5, 10.0, (5, 10, 15))
    assert shifting_time(p, d) == pytest.approx(10.0 * (math.exp(0.8 * (0.5 - 2.5)) - 1.0), rel=1e-13)


# ---------------------------------------------------------------- hazard, reliability, probabilities

def test_cumulative_hazard_quadrature_oracle(linear_case):
    p, d = linear_case
    assert cumulative_hazard(0.0, p, d) == 0.0
    for t in (1.0, 7.5, 14.0, 16.0, 22.0, 30.0):
        assert cumulative_hazard(t, p, d) == pytest.approx(
            hazard_by_quadrature(t, LINEAR_THETA, 0.5, 2.5, 14.0), rel=1e-11
        )
    assert cumulative_hazard(16.0, p, d) == pytest.approx(1.379226469654971, rel=1e-12)


def test_reliability_examples(linear_case):
    p, d = linear_case
    assert step_reliability(0.0, p, d) == 1.0
    expected = math.exp(-hazard_by_quadrature(22.0, LINEAR_THETA, 0.5, 2.5, 14.0))
    assert step_reliability(22.0, p, d) == pytest.approx(expected, rel=1e-11)
    eps = 1e-9
    assert step_reliability(14.0 - eps, p, d) == pytest.approx(step_reliability(14.0 + eps, p, d), abs=1e-8)


def test_cell_probabilities_linear_scenario(linear_case):
    p, d = linear_case
    pi = cell_probabilities(p, d)
    oracle = cell_probs_by_quadrature(LINEAR_THETA, 0.5, 2.5, 14.0, d.inspection_times)
    np.testing.assert_allclose(pi, oracle, rtol=1e-10)
    assert pi.shape == (12,)
    assert abs(pi.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(pi[:3], [0.05809811, 0.07717854, 0.09094861], atol=5e-9)


def test_cell_probabilities_quadratic_scenario(quadratic_case):
    p, d = quadratic_case
    pi = cell_probabilities(p, d)
    oracle = cell_probs_by_quadrature(QUADRATIC_THETA, 0.5, 2.5, 8.0, d.inspection_times)
    np.testing.assert_allclose(pi, oracle, rtol=1e-10)
    assert abs(pi.sum() - 1.0) < 1e-12


def test_single_interval_design():
    p = ModelParams.from_vector("linear", LINEAR_THETA)
    d = StepStressDesign(0.5, 2.5, 3.0, (3.0,))
    pi = cell_probabilities(p, d)
    r1 = step_reliability(3.0, p, d)
    np.testing.assert_allclose(pi, [1 - r1, r1], rtol=1e-14)


def test_probabilities_error_when_a_cell_underflows():
    p = ModelParams.from_vector("linear", (5.0, 5.0, 1.0))
    d = StepStressDesign(0.5, 2.5, 50.0, (10.0, 50.0, 100.0))
    with pytest.raises(NumericalError):
        cell_probabilities(p, d)


# ---------------------------------------------------------------- Jacobian

@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_jacobian_scenarios_vs_finite_differences(kind):
    theta = LINEAR_THETA if kind == "linear" else QUADRATIC_THETA
    d = linear_design() if kind == "linear" else quadratic_design()
    p = ModelParams.from_vector(kind, theta)
    W = cell_prob_jacobian(p, d)
    F = central_diff(lambda th: cell_probabilities(ModelParams.from_vector(kind, th), d), theta)
    assert W.shape == (d.n_cells, len(theta))
    assert col_rel_err(W, F) < 1e-5
    np.testing.assert_allclose(W.sum(axis=0), 0.0, atol=1e-12)


def test_first_stage_reliability_gradient_gamma0(linear_case):
    # dR(t)/dgamma0 = -R(t) exp(a1 x1) t under the first stress
    p, d = linear_case
    t = 2.0
    analytic = -step_reliability(t, p, d) * math.exp(0.5 * 0.5) * t
    W = cell_prob_jacobian(p, d)
    # pi_1 = 1 - R(t_1), so dpi_1/dgamma0 = -dR(t_1)/dgamma0
    assert -W[0, 0] == pytest.approx(analytic, rel=1e-13)


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_jacobian_random_draws(kind):
    rng = np.random.default_rng(11 if kind == "linear" else 12)
    worst = 0.0
    for _ in range(50):
        p, d = random_case(rng, kind, allow_zero=False, h_range=(0.1, 8.0))
        W = cell_prob_jacobian(p, d)
        F = central_diff(lambda th: cell_probabilities(ModelParams.from_vector(kind, th), d), p.vector)
        worst = max(worst, col_rel_err(W, F))
    assert worst < 1e-5


def test_quadratic_reduces_to_linear():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p, d = random_case(rng, "linear", allow_zero=False)
        g0, g1 = p.gamma
        q = ModelParams(BaselineHazard.quadratic(g0, g1, 0.0), p.a1)
        np.testing.assert_allclose(cell_probabilities(q, d), cell_probabilities(p, d), rtol=1e-10, atol=1e-15)
        Wq = cell_prob_jacobian(q, d)
        Wl = cell_prob_jacobian(p, d)
        np.testing.assert_allclose(Wq[:, [0, 1, 3]], Wl, rtol=1e-10, atol=1e-14)


# ---------------------------------------------------------------- properties

@st.composite
def cases(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    kind = draw(st.sampled_from(["linear", "quadratic"]))
    return random_case(np.random.default_rng(seed), kind)


@given(cases())
def test_invariants_hold_for_random_configurations(case):
    p, d = case
    s = shifting_time(p, d)
    assert s <= 0 and d.tau + s > 0
    assert abs(shift_residual(p, d, s)) < 1e-10
    pi = cell_probabilities(p, d)
    assert np.all(pi > 0)
    assert abs(pi.sum() - 1.0) < 1e-12
    h_minus = cumulative_hazard(d.tau, p, d)
    h_plus = cumulative_hazard(d.tau * (1 + 1e-15), p, d)
    assert abs(h_plus - h_minus) <= 1e-10 * h_minus


@given(cases())
def test_reliability_is_monotone(case):
    p, d = case
    grid = np.linspace(0.0, d.inspection_times[-1] * 1.2, 100)
    H = cumulative_hazard(grid, p, d)
    R = step_reliability(grid, p, d)
    assert np.all(np.diff(H) >= 0)
    assert np.all(np.diff(R) <= 0)
    assert R[0] == 1.0


@given(st.floats(0.01, 3.0), st.floats(-2.0, 2.0), st.floats(0.01, 2.0))
def test_acceleration_factor_monotone(a1, x, dx):
    assert acceleration_factor(x + dx, a1) > acceleration_factor(x, a1) > 0
