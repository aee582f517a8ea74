import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stepstress.model import BaselineHazard, ModelParams, StepStressDesign

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile("default")

LINEAR_THETA = (math.exp(-4.0), math.exp(-5.3), 0.5)
QUADRATIC_THETA = (math.exp(-4.0), 0.0, math.exp(-6.0), 0.5)
MOS_THETA = (1e-4, 0.5, 3800.0)
MOS_TIMES = (40, 60, 90, 110, 130, 150, 170, 183, 190, 210, 220, 250)


def linear_design(n_units=200):
    return StepStressDesign(0.5, 2.5, 14.0, tuple(range(2, 23, 2)), n_units)


def quadratic_design(n_units=200):
    return StepStressDesign(0.5, 2.5, 8.0, tuple(range(1, 13)), n_units)


def mos_design(n_units=200, tau=150.0):
    return StepStressDesign(-2.3914e-3, -1.9114e-3, tau, MOS_TIMES, n_units)


@pytest.fixture
def linear_case():
    return ModelParams.from_vector("linear", LINEAR_THETA), linear_design()


@pytest.fixture
def quadratic_case():
    return ModelParams.from_vector("quadratic", QUADRATIC_THETA), quadratic_design()


def random_case(rng: np.random.Generator, kind: str, allow_zero: bool = True, h_range=(0.05, 15.0)):
    """A random valid (theta, design) pair with a total cumulative hazard in ``h_range``."""
    L = int(rng.integers(2, 16))
    times = tuple(np.round(np.cumsum(rng.uniform(0.5, 3.0, L)), 6))
    tau = times[int(rng.integers(0, L))]
    x1 = float(rng.uniform(-1.0, 2.0))
    x2 = x1 + float(rng.uniform(0.05, 3.0))
    a1 = float(np.exp(rng.uniform(np.log(0.05), np.log(2.0))))
    m = 2 if kind == "linear" else 3
    gam = np.exp(rng.uniform(np.log(1e-3), np.log(1.0), m)) / np.array([1.0, 10.0, 100.0][:m])
    if allow_zero and rng.random() < 0.2:
        gam[int(rng.integers(0, m))] = 0.0
    design = StepStressDesign(x1, x2, tau, times, 100)
    # scaling every gamma by k scales the cumulative hazard by k and leaves s unchanged
    probe = ModelParams(BaselineHazard(kind, tuple(gam)), a1)
    from stepstress.model import cumulative_hazard

    h_end = float(cumulative_hazard(times[-1], probe, design))
    target = float(np.exp(rng.uniform(np.log(h_range[0]), np.log(h_range[1]))))
    gam = gam * (target / h_end)
    return ModelParams(BaselineHazard(kind, tuple(gam)), a1), design
