import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fkprop.errors import DetailedBalanceError, DomainError, InvalidScheduleError
from fkprop.generators import (EdgeSet, MetropolisFamily, SpeedSchedule, apply_generator,
                               check_qmatrix, detailed_balance_residual, dirichlet_form,
                               metropolis_rates)
from fkprop.model import LinearSchedule, MeasureFamily, measure_at

from conftest import random_reversible_chain


def test_edge_set_normalises_and_rejects():
    e = EdgeSet([(1, 0), (1, 2)])
    assert e.pairs == frozenset({(0, 1), (1, 2)})
    with pytest.raises(DomainError):
        EdgeSet([(0, 0)])
    with pytest.raises(DomainError):
        EdgeSet([(0, 1), (1, 0)])
    with pytest.raises(DomainError):
        EdgeSet([(0, 3)]).adjacency(3)


def test_speed_schedule_validation_and_interpolation():
    with pytest.raises(InvalidScheduleError):
        SpeedSchedule([0.0, 1.0], [1.0, -1.0])
    with pytest.raises(InvalidScheduleError):
        SpeedSchedule([1.0, 0.0], [1.0, 1.0])
    s = SpeedSchedule([0.0, 1.0], [1.0, 3.0])
    assert s(0.5) == 2.0 and s(5.0) == 3.0 and s.sup() == 3.0
    assert SpeedSchedule.constant(4.0)(2.0) == 4.0


def test_check_qmatrix():
    with pytest.raises(DomainError):
        check_qmatrix([[-1.0, 1.0], [2.0, -1.0]])
    with pytest.raises(DomainError):
        check_qmatrix([[1.0, -1.0], [0.0, 0.0]])
    check_qmatrix([[-1.0, 1.0], [2.0, -2.0]])


def test_two_state_metropolis_rates():
    mu = np.array([0.7, 0.3])
    Q = metropolis_rates(mu, EdgeSet([(0, 1)]).adjacency(2))
    np.testing.assert_allclose(Q, [[-0.5 * 3 / 7, 0.5 * 3 / 7], [0.5, -0.5]], atol=1e-15)
    assert detailed_balance_residual(Q, mu) <= 1e-15


def test_db_residual_examples():
    absorbing = np.array([[-1.0, 1.0], [0.0, 0.0]])
    assert detailed_balance_residual(absorbing, [0.5, 0.5]) == pytest.approx(0.5)
    symmetric = np.array([[-1.0, 1.0], [1.0, -1.0]])
    assert detailed_balance_residual(symmetric, [0.5, 0.5]) == 0.0
    with pytest.raises(DomainError):
        detailed_balance_residual(symmetric, [1 / 3] * 3)


def test_apply_generator_examples():
    Q = np.array([[-2.0, 2.0], [3.0, -3.0]])
    np.testing.assert_array_equal(apply_generator(Q, [1.0, 1.0]), [0.0, 0.0])
    np.testing.assert_array_equal(apply_generator(Q, [0.0, 1.0]), [2.0, -3.0])
    with pytest.raises(DomainError):
        apply_generator(Q, [1.0, 2.0, 3.0])


def test_dirichlet_form_example_and_guard():
    Q = np.array([[-0.5, 0.5], [0.5, -0.5]])
    assert dirichlet_form(Q, [0.5, 0.5], [1.0, -1.0]) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DetailedBalanceError):
        dirichlet_form(Q, [0.75, 0.25], [1.0, -1.0])


def test_dirichlet_form_is_minus_generator_pairing(rng):
    Q, mu = random_reversible_chain(rng, 5, density=0.6)
    f, g = rng.standard_normal((2, 5))
    assert dirichlet_form(Q, mu, f, g) == pytest.approx(-np.dot(f * mu, apply_generator(Q, g)),
                                                         rel=1e-12)
    assert dirichlet_form(Q, mu, f, g) == pytest.approx(dirichlet_form(Q, mu, g, f), rel=1e-12)
    assert dirichlet_form(Q, mu, np.ones(5)) == pytest.approx(0.0, abs=1e-15)
    assert abs(np.dot(apply_generator(Q, g), mu)) <= 1e-12
    assert np.max(np.abs(mu @ Q)) <= 1e-10


def test_metropolis_family_reversible_along_schedule():
    fam = MeasureFamily(np.full(4, 0.25), LinearSchedule(np.array([0.0, 1.0, -1.0, 2.0])))
    gens = MetropolisFamily(fam, EdgeSet.complete(4), SpeedSchedule.constant(3.0))
    for t in np.linspace(0, 5, 11):
        Q = check_qmatrix(gens.at(t))
        assert detailed_balance_residual(Q, measure_at(fam, t)) <= 1e-12
    np.testing.assert_allclose(gens.rate_matrix(1.0), 3.0 * gens.at(1.0))


@settings(max_examples=300, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 2 ** 32 - 1), p=st.floats(2.0, 8.0))
def test_stroock_varopoulos_inequality(n, seed, p):
    # E(phi, phi^{p-1}) >= 4 (p-1) / p^2 * E(phi^{p/2}) for phi >= 0
    rng = np.random.default_rng(seed)
    Q, mu = random_reversible_chain(rng, n, density=0.5)
    phi = rng.random(n) * rng.choice([0.0, 1.0, 10.0], p=[0.1, 0.6, 0.3], size=n)
    lhs = dirichlet_form(Q, mu, phi, phi ** (p - 1))
    rhs = 4 * (p - 1) / p ** 2 * dirichlet_form(Q, mu, phi ** (p / 2))
    assert lhs - rhs >= -1e-10 * max(1.0, abs(lhs))
