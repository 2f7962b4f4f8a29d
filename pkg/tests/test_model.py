import math

import numpy as np
import pytest

from fkprop.errors import DomainError, InvalidScheduleError
from fkprop.model import (EndpointTransferSchedule, LinearSchedule, MeasureFamily,
                          PiecewiseLinearSchedule, StateSpace, TimeGrid, as_probability,
                          h_rate_at, measure_at, reconstruct_measure)


def two_state_family():
    return MeasureFamily(np.array([0.5, 0.5]), LinearSchedule(np.array([0.0, 1.0])))


def endpoint_family(n, eps=0.5, omega=1.0):
    return MeasureFamily(np.full(n + 1, 1.0 / (n + 1)), EndpointTransferSchedule(n, eps, omega))


def test_state_space_rejects_bad_labels():
    with pytest.raises(DomainError):
        StateSpace(("a",))
    with pytest.raises(DomainError):
        StateSpace(("a", "a"))
    assert StateSpace.range(3).index(2) == 2


def test_time_grid_step_is_exact():
    g = TimeGrid(0.0, 2.0, 8)
    assert g.step == 0.25
    assert g.knots[0] == 0.0 and g.knots[-1] == 2.0 and g.knots.size == 9
    with pytest.raises(DomainError):
        TimeGrid(0.0, 1.0, 0)


def test_probability_validation():
    with pytest.raises(DomainError):
        as_probability([0.5, 0.6])
    with pytest.raises(DomainError):
        as_probability([1.0, 0.0])


def test_measure_at_zero_is_mu0():
    fam = MeasureFamily(np.array([0.2, 0.3, 0.5]), LinearSchedule(np.array([1.0, -2.0, 0.5])))
    np.testing.assert_allclose(measure_at(fam, 0.0), fam.mu0, rtol=0, atol=1e-15)


def test_two_state_measure_closed_form():
    mu = measure_at(two_state_family(), 1.0)
    e = math.exp(-1.0)
    np.testing.assert_allclose(mu, [1 / (1 + e), e / (1 + e)], rtol=0, atol=1e-15)
    np.testing.assert_allclose(mu, [0.731059, 0.268941], atol=1e-6)


def test_endpoint_transfer_uniform_at_zero():
    np.testing.assert_allclose(measure_at(endpoint_family(4), 0.0), np.full(5, 0.2), atol=1e-15)


def test_endpoint_transfer_rejects_eps_out_of_range():
    with pytest.raises((DomainError, InvalidScheduleError)):
        EndpointTransferSchedule(4, 1.0, 1.0)


def test_h_rate_two_state_at_zero():
    np.testing.assert_allclose(h_rate_at(two_state_family(), 0.0), [-0.5, 0.5], atol=1e-15)


def test_h_rate_vanishes_for_constant_schedule():
    fam = MeasureFamily(np.array([0.2, 0.8]), LinearSchedule(np.zeros(2)))
    assert np.all(h_rate_at(fam, 3.0) == 0)


@pytest.mark.parametrize("fam", [two_state_family(), endpoint_family(10)])
def test_normalisation_and_centering(fam):
    times = np.linspace(0.0, 10.0, 101)
    mu = measure_at(fam, times)
    H = h_rate_at(fam, times)
    assert np.max(np.abs(mu.sum(axis=1) - 1)) <= 1e-12
    assert np.max(np.abs(np.sum(H * mu, axis=1))) <= 1e-12
    assert mu.min() > 0


def test_endpoint_interior_rates_zero_and_sup_bound():
    n = 10
    fam = endpoint_family(n)
    times = np.linspace(0, 2 * math.pi, 2001)
    H = h_rate_at(fam, times)
    assert np.max(np.abs(H[:, 1:n])) <= 1e-15
    assert np.max(np.abs(H)) <= 1.0 + 1e-12
    # sin(omega t) = 0 gives H(0) = -eps omega (mass entering 0 at t = 0)
    np.testing.assert_allclose(h_rate_at(fam, 0.0)[[0, n]], [-0.5, 0.5], atol=1e-15)


def test_h_is_negative_log_derivative():
    fam = endpoint_family(6)
    t, h = 0.7, 1e-5
    num = -(np.log(measure_at(fam, t + h)) - np.log(measure_at(fam, t - h))) / (2 * h)
    np.testing.assert_allclose(h_rate_at(fam, t), num, atol=1e-9)


@pytest.mark.parametrize("fam, t", [(two_state_family(), 1.0), (endpoint_family(10), 1.0),
                                    (endpoint_family(4), 10.0)])
def test_reconstruction_oracle(fam, t):
    grid = TimeGrid.from_step(0.0, t, 1e-3)
    rec = reconstruct_measure(fam, t, grid)
    assert np.max(np.abs(rec - measure_at(fam, t))) <= 1e-8


def test_reconstruction_needs_covering_grid():
    with pytest.raises(DomainError):
        reconstruct_measure(two_state_family(), 2.0, TimeGrid(0.0, 1.0, 10))


def test_piecewise_right_derivative_at_knot():
    sched = PiecewiseLinearSchedule([0.0, 1.0, 2.0], [[0, 0], [1, 0], [1, 3]])
    fam = MeasureFamily(np.array([0.5, 0.5]), sched)
    np.testing.assert_allclose(sched.rate(1.0), [0.0, 3.0])
    np.testing.assert_allclose(sched.rate(0.5), [1.0, 0.0])
    H = h_rate_at(fam, 1.0)
    assert abs(H @ measure_at(fam, 1.0)) <= 1e-12


def test_overflow_safe_log_domain():
    fam = MeasureFamily(np.array([0.5, 0.5]), LinearSchedule(np.array([0.0, 1000.0])))
    mu = measure_at(fam, 1.0)
    assert np.all(np.isfinite(mu)) and abs(mu.sum() - 1) <= 1e-12


def test_negative_time_rejected():
    with pytest.raises(DomainError):
        measure_at(two_state_family(), -1.0)
