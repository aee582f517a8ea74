import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stepstress.characteristics import NocQuery
from stepstress.estimation import FitOptions, GroupedCounts
from stepstress.model import ModelParams, StepStressDesign, cell_probabilities
from stepstress.simulation import (
    ContaminationSpec,
    SimulationConfig,
    adjusted_residuals,
    conditional_probabilities,
    generate_counts,
    replicate_seed,
    rmse_study,
)

from conftest import LINEAR_THETA, linear_design, random_case


@pytest.fixture
def truth():
    return ModelParams.from_vector("linear", LINEAR_THETA)


def small_config(truth, **kw):
    base = dict(
        theta0=truth,
        design=linear_design(),
        query=NocQuery(0.3, 5.0),
        beta_grid=(0.0, 0.6),
        epsilons=(0.0, 1.0),
        contaminated_cell=10,
        replicates=6,
        master_seed=123,
        fit_options=FitOptions(n_starts=2),
    )
    base.update(kw)
    return SimulationConfig(**base)


# ---------------------------------------------------------------- data generation

def test_conditional_probabilities_rebuild_cells(truth):
    d = linear_design()
    q, clamped = conditional_probabilities(truth, d)
    assert not clamped
    surv = np.concatenate(([1.0], np.cumprod(1 - q)))
    pi = np.append(surv[:-1] * q, surv[-1])
    np.testing.assert_allclose(pi, cell_probabilities(truth, d), rtol=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["linear", "quadratic"]))
def test_counts_are_conserved(seed, kind):
    rng = np.random.default_rng(seed)
    p, d = random_case(rng, kind)
    n = int(rng.integers(1, 500))
    eps = float(rng.uniform(0, 3))
    spec = ContaminationSpec(int(rng.integers(1, d.n_inspections + 1)), eps)
    counts = generate_counts(p, d, spec, seed=seed, n_units=n)
    assert sum(counts.counts) == n and len(counts.counts) == d.n_cells
    assert min(counts.counts) >= 0


def test_same_seed_same_counts(truth):
    d = linear_design()
    a = generate_counts(truth, d, seed=replicate_seed(7, 3))
    b = generate_counts(truth, d, seed=replicate_seed(7, 3))
    c = generate_counts(truth, d, seed=replicate_seed(7, 4))
    assert a == b and a != c


def test_large_sample_frequencies_match_model(truth):
    d = linear_design()
    n = 10**6
    counts = np.array(generate_counts(truth, d, seed=1, n_units=n).counts)
    pi = cell_probabilities(truth, d)
    se = np.sqrt(pi * (1 - pi) / n)
    assert np.all(np.abs(counts / n - pi) < 3.5 * se)


def test_contaminated_cell_frequency_doubles(truth):
    d = linear_design()
    pi = cell_probabilities(truth, d)
    n = 10**6
    spec = ContaminationSpec(10, 1.0)
    freq = generate_counts(truth, d, spec, seed=2, n_units=n).counts[9] / n
    target = 2 * pi[9]
    assert abs(freq - target) < 4 * math.sqrt(target * (1 - target) / n)


def test_contamination_clamps_at_one():
    p = ModelParams.from_vector("linear", (0.3, 0.01, 0.5))
    d = StepStressDesign(0.5, 2.5, 4.0, (2.0, 4.0, 6.0), 50)
    q, clamped = conditional_probabilities(p, d, ContaminationSpec(3, 20.0))
    assert clamped and q[2] == 1.0
    counts = generate_counts(p, d, ContaminationSpec(3, 20.0), seed=0)
    assert counts.counts[-1] == 0


def test_contamination_spec_validation():
    with pytest.raises(ValueError):
        ContaminationSpec(0, 1.0)
    with pytest.raises(ValueError):
        ContaminationSpec(3, -0.5)
    with pytest.raises(ValueError):
        ContaminationSpec(12, 1.0).check_design(linear_design())
    with pytest.raises(ValueError):
        generate_counts(ModelParams.from_vector("linear", LINEAR_THETA), linear_design(), n_units=0)


# ---------------------------------------------------------------- residuals

def test_residuals_vanish_at_model(truth):
    d = StepStressDesign(0.5, 2.5, 14.0, tuple(range(2, 23, 2)), 200)
    pi = cell_probabilities(truth, d)

    class Exact(GroupedCounts):  # fractional counts give p_hat == pi exactly
        def __post_init__(self):
            pass

    r = adjusted_residuals(Exact(tuple(pi * 1000)), truth, d)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_residuals_are_linear_in_counts(truth):
    d = linear_design()
    base = generate_counts(truth, d, seed=5)
    bumped = list(base.counts)
    bumped[4] += 7
    bumped[-1] -= 7
    r0 = adjusted_residuals(base, truth, d)
    r1 = adjusted_residuals(GroupedCounts(tuple(bumped)), truth, d)
    pi = cell_probabilities(truth, d)
    n = base.n_units
    expect = math.sqrt(n) * (7 / n) / np.sqrt(pi * (1 - pi))
    assert r1[4] - r0[4] == pytest.approx(expect[4], rel=1e-12)
    assert r1[-1] - r0[-1] == pytest.approx(-expect[-1], rel=1e-12)
    np.testing.assert_allclose((r1 - r0)[[0, 1, 2, 3, 5, 6, 7, 8, 9, 10]], 0.0, atol=1e-12)


def test_clean_residuals_are_standardized(truth):
    d = linear_design(5000)
    res = np.array([adjusted_residuals(generate_counts(truth, d, seed=replicate_seed(99, i)), truth, d)
                    for i in range(1000)])
    var = res.var(axis=0, ddof=1)
    assert np.all((0.85 <= var) & (var <= 1.15)), var
    assert np.all(np.abs(res.mean(axis=0)) < 0.15)


def test_contamination_moves_residuals_away_from_zero(truth):
    """The contaminated cell rises with epsilon; later cells lose the failures it absorbs."""
    d = linear_design()
    eps_grid = (0.0, 0.4, 0.8, 1.2)
    mean_res = []
    for eps in eps_grid:
        spec = ContaminationSpec(10, eps)
        res = [adjusted_residuals(generate_counts(truth, d, spec, replicate_seed(11, i)), truth, d)
               for i in range(400)]
        mean_res.append(np.mean(res, axis=0))
    mean_res = np.array(mean_res)
    assert np.all(np.diff(mean_res[:, 9]) > 0)
    for j in (10, 11):
        assert np.all(np.diff(np.abs(mean_res[:, j])) > 0)
        assert np.all(mean_res[1:, j] < 0)


# ---------------------------------------------------------------- Monte Carlo driver

def test_config_validation(truth):
    with pytest.raises(ValueError):
        small_config(truth, contaminated_cell=None)
    with pytest.raises(ValueError):
        small_config(truth, replicates=0)
    with pytest.raises(ValueError):
        small_config(truth, beta_grid=(-0.1,))
    with pytest.raises(ValueError):
        small_config(truth, contaminated_cell=12)


def test_study_report_shape_and_content(truth):
    cfg = small_config(truth)
    rep = rmse_study(cfg)
    assert rep.theta.shape == (2, 2, 6, 3)
    assert rep.residuals.shape == (2, 6, 12)
    assert not rep.flagged()
    d = rep.to_dict()
    assert len(d["results"]) == 4
    assert set(d["results"][0]["rmse"]) == {"gamma0", "gamma1", "a1", "median", "mean", "hazard", "reliability"}
    assert len(rep.rmse_rows()) == 4 * 7
    assert len(rep.residual_rows()) == 2 * 12
    # the clean and contaminated draws share replicate streams
    assert np.all(rep.residuals[1, :, :9] == rep.residuals[0, :, :9])


def test_study_is_independent_of_worker_count(truth):
    cfg = small_config(truth, replicates=5)
    a = rmse_study(cfg, threads=1)
    b = rmse_study(cfg, threads=3)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.residuals, b.residuals)
    assert a.to_dict() == b.to_dict()


def test_single_huge_replicate_is_consistent(truth):
    cfg = small_config(truth, design=linear_design(10**6), epsilons=(0.0,), contaminated_cell=None,
                       beta_grid=(0.0, 0.5), replicates=1)
    rep = rmse_study(cfg)
    for b in range(2):
        rmse = rep.rmse(0, b)
        for k, name in enumerate(rep.param_names):
            assert rmse[name] < 0.02 * LINEAR_THETA[k]
