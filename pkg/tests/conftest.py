import numpy as np
import pytest

from fkprop.generators import EdgeSet
from fkprop.scenarios import (disconnected_halves_scenario, endpoint_transfer_scenario,
                              homogeneous_scenario, piecewise_scenario, two_state_scenario)


def random_reversible_chain(rng, n, density=1.0):
    """Random ``(Q, mu)`` in detailed balance: ``Q(x,y) = c(x,y) / mu(x)``.

    The path edges are always present so the chain is irreducible.
    """
    mu = rng.random(n) + 0.05
    mu /= mu.sum()
    c = np.zeros((n, n))
    for x in range(n):
        for y in range(x + 1, n):
            if y == x + 1 or rng.random() < density:
                c[x, y] = c[y, x] = rng.random() + 0.01
    Q = c / mu[:, None]
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q, mu


def centred(rng, mu):
    H = rng.standard_normal(mu.size)
    return H - H @ mu


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def two_state():
    return two_state_scenario()


@pytest.fixture(scope="session")
def fixture_scenarios():
    """Five scenarios used by the propagator property checks."""
    return [
        two_state_scenario(),
        endpoint_transfer_scenario(5, t_end=2.0),
        homogeneous_scenario([0.2, 0.3, 0.5], EdgeSet.complete(3)),
        disconnected_halves_scenario(),
        piecewise_scenario(),
    ]
