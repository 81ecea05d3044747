"""Shared fixtures and toy systems for the test suite."""

import numpy as np
import pytest

from trajsurrogate.dataset import RngSeed, SampleSet
from trajsurrogate.dynsys import SystemSpec
from trajsurrogate.integrator import TimeGrid


def decay_system(rate: float = 1.0, x0: float = 1.0, tf: float = 1.0) -> SystemSpec:
    """Scalar ODE x' = -rate*x with closed-form solution x0*exp(-rate*t)."""
    return SystemSpec(
        dim=1,
        mass=lambda p: np.eye(1),
        rhs=lambda t, x, p: -rate * x,
        qoi=lambda x: float(x[0]),
        initial=lambda p: np.array([x0]),
        t0=0.0,
        tf=tf,
        jac=lambda t, x, p: np.array([[-rate]]),
    )


def coupled_dae() -> SystemSpec:
    """Index-1 DAE: x1' = -x1, 0 = x1 - x2; both components equal exp(-t)."""
    return SystemSpec(
        dim=2,
        mass=lambda p: np.diag([1.0, 0.0]),
        rhs=lambda t, x, p: np.array([-x[0], x[0] - x[1]]),
        qoi=lambda x: float(x[1]),
        initial=lambda p: np.array([1.0, 1.0]),
        t0=0.0,
        tf=1.0,
        jac=lambda t, x, p: np.array([[-1.0, 0.0], [1.0, -1.0]]),
    )


def affine_sets(seed: int = 0, q: int = 3, m: int = 5, k: int = 30):
    """Train/validation/test sets whose targets follow one affine map."""
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((m, q))
    c = rng.standard_normal(m)
    grid = TimeGrid(0.0, 0.5, m)

    def make(role, n, shift):
        params = rng.uniform(-1.0 + shift, 2.0 + shift, (n, q))
        return SampleSet(role, params, params @ B.T + c, grid)

    return make("train", k, 0.0), make("validation", k // 2, 0.1), make("test", k // 2, 0.2)


@pytest.fixture
def weight_seed():
    return RngSeed(123, "weights")
