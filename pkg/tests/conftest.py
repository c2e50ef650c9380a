import numpy as np
import pytest

from tailchain.chain import StepMap
from tailchain.optimizers import LinearRecurrenceMap
from tailchain.problems import GaussianSource, RidgeCoeffSampler, RidgeProblem


class AffineMap(StepMap):
    """Deterministic w' = a w + c test map (no randomness)."""

    def __init__(self, a, c, dim=1):
        self.a = a
        self.c = c
        self.dim = dim

    def step(self, w, k, streams):
        return self.a * w + self.c


class AffineBlockMap(AffineMap):
    """Same map with a block fast path, for engine cross-checks."""

    def step_block(self, w, k0, nb, streams):
        out = np.empty((nb, self.dim))
        state = w
        for i in range(nb):
            state = self.a * state + self.c
            out[i] = state
        return out


def toy_ridge_problem(gamma=0.5, lam=0.0):
    """The 1-d standard-normal synthetic ridge problem (w' = (1-x^2/2)w + xy/2
    at the defaults)."""
    return RidgeProblem(GaussianSource(1, 1), lam=lam, gamma=gamma,
                        batch_size=1)


@pytest.fixture
def toy_problem():
    return toy_ridge_problem()


@pytest.fixture
def toy_sampler(toy_problem):
    return RidgeCoeffSampler(toy_problem)


@pytest.fixture
def toy_map(toy_sampler):
    return LinearRecurrenceMap(toy_sampler)
