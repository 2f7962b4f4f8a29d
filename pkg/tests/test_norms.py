import math

import numpy as np
import pytest

from fkprop.errors import DomainError
from fkprop.norms import (closed_form_norm, lp_norm, lp_operator_norm, mean_zero_basis,
                          mean_zero_norm, operator_norm_2, operator_norm_pq)


def _random_instance(rng, n):
    Q = rng.random((n, n)) + 0.01
    mu_s = rng.random(n) + 0.1
    mu_t = rng.random(n) + 0.1
    return Q, mu_s / mu_s.sum(), mu_t / mu_t.sum()


def test_lp_norm_examples():
    mu = np.array([0.25, 0.75])
    assert lp_norm([1.0, 1.0], mu, 3.0) == pytest.approx(1.0)
    assert lp_norm([1.0, -1.0], [0.5, 0.5], 2.0) == pytest.approx(1.0)
    assert lp_norm([2.0, 0.0], mu, 2.0) == pytest.approx(1.0)
    assert lp_norm([2.0, -3.0], mu, math.inf) == 3.0
    with pytest.raises(DomainError):
        lp_norm([1.0], [1.0], 0.5)


def test_identity_has_unit_norm():
    mu = np.array([0.2, 0.3, 0.5])
    assert operator_norm_2(np.eye(3), mu, mu).value == pytest.approx(1.0, abs=1e-12)
    for p in (1.5, 3.0):
        assert operator_norm_pq(np.eye(3), mu, mu, p, p).value == pytest.approx(1.0, abs=1e-10)


def test_frozen_two_state_norm():
    mu0 = np.array([0.5, 0.5])
    e = math.exp(-1)
    mu1 = np.array([1 / (1 + e), e / (1 + e)])
    res = operator_norm_2(np.diag(mu1 / mu0), mu0, mu1)
    assert res.value == pytest.approx(math.sqrt(2 / (1 + e)), abs=1e-12)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, 6.0, math.inf])
def test_diagonal_closed_form(rng, p):
    mu_s = rng.dirichlet(np.ones(5))
    mu_t = rng.dirichlet(np.ones(5))
    Q = np.diag(mu_t / mu_s)
    expected = np.max(mu_t / mu_s) ** (1.0 if p == math.inf else (p - 1) / p)
    assert lp_operator_norm(Q, mu_s, mu_t, p) == pytest.approx(expected, rel=1e-8)


def test_two_methods_agree_at_p2(rng):
    for _ in range(20):
        Q, mu_s, mu_t = _random_instance(rng, int(rng.integers(2, 7)))
        exact = operator_norm_2(Q, mu_s, mu_t).value
        boyd = operator_norm_pq(Q, mu_s, mu_t, 2.0, 2.0, n_probes=0).value
        assert boyd == pytest.approx(exact, abs=1e-8)


def test_maximizer_is_nonnegative_and_attains(rng):
    Q, mu_s, mu_t = _random_instance(rng, 4)
    res = operator_norm_pq(Q, mu_s, mu_t, 2.0, 4.0)
    f = res.maximizer
    assert f.min() >= -1e-12
    ratio = lp_norm(Q @ f, mu_s, 4.0) / lp_norm(f, mu_t, 2.0)
    assert ratio == pytest.approx(res.value, abs=1e-8)


def test_probe_bound_consistency(rng):
    for _ in range(5):
        Q, mu_s, mu_t = _random_instance(rng, 3)
        res = operator_norm_pq(Q, mu_s, mu_t, 2.0, 3.0)
        assert res.converged
        assert res.probe_bound <= res.value + 1e-10
        assert res.value <= res.probe_bound + 1e-6


def test_monotone_in_exponents(rng):
    for _ in range(10):
        Q, mu_s, mu_t = _random_instance(rng, 4)
        by_q = [operator_norm_pq(Q, mu_s, mu_t, 2.0, r, n_probes=0).value for r in (2, 3, 5, 8)]
        by_p = [operator_norm_pq(Q, mu_s, mu_t, p, 8.0, n_probes=0).value for p in (1.5, 2, 4, 8)]
        assert np.all(np.diff(by_q) >= -1e-10)
        assert np.all(np.diff(by_p) <= 1e-10)


def test_closed_forms_match_iteration_limits(rng):
    Q, mu_s, mu_t = _random_instance(rng, 4)
    near_inf = operator_norm_pq(Q, mu_s, mu_t, 200.0, 200.0, n_probes=0).value
    assert near_inf == pytest.approx(closed_form_norm(Q, mu_s, mu_t, math.inf, math.inf), rel=5e-2)
    # p = 1: the sup over unit-mass point functions
    f = np.zeros(4)
    vals = []
    for y in range(4):
        f[:] = 0
        f[y] = 1 / mu_t[y]
        vals.append(lp_norm(Q @ f, mu_s, 2.0))
    assert closed_form_norm(Q, mu_s, mu_t, 1.0, 2.0) == pytest.approx(max(vals), rel=1e-12)


def test_argument_validation(rng):
    Q, mu_s, mu_t = _random_instance(rng, 3)
    with pytest.raises(DomainError):
        operator_norm_pq(Q, mu_s, mu_t, 3.0, 2.0)
    with pytest.raises(DomainError):
        operator_norm_pq(-Q, mu_s, mu_t, 2.0, 2.0)


def test_mean_zero_basis_is_orthonormal(rng):
    mu = rng.dirichlet(np.ones(6))
    V = mean_zero_basis(mu)
    assert V.shape == (6, 5)
    np.testing.assert_allclose(mu @ V, 0.0, atol=1e-14)
    np.testing.assert_allclose(V.T @ (mu[:, None] * V), np.eye(5), atol=1e-12)


def test_mean_zero_norm_of_markov_kernel(rng):
    # rank-one kernel f -> <f, mu> kills every mean-zero function
    mu = rng.dirichlet(np.ones(4))
    P = np.tile(mu, (4, 1))
    assert operator_norm_2(P, mu, mu, mean_zero=True).value <= 1e-12
    assert mean_zero_norm(P, mu, mu, 3.0).value <= 1e-12
    Q, mu_s, mu_t = _random_instance(rng, 4)
    assert mean_zero_norm(Q, mu_s, mu_t, 2.0).value <= operator_norm_2(Q, mu_s, mu_t).value + 1e-12
