import math

import numpy as np
import pytest
from scipy.special import xlog1py

from fkprop.errors import DetailedBalanceError, InfiniteConstantError
from fkprop.generators import dirichlet_form
from fkprop.inequalities import (ab_comparison_bounds, compute_constants, log_sobolev_constant,
                                 spectral_gap_constant, weighted_poincare_A, weighted_poincare_B)
from fkprop.model import variance
from fkprop.scenarios import (disconnected_halves_scenario, endpoint_transfer_scenario,
                              two_state_scenario)

from conftest import centred, random_reversible_chain
from oracles import grid_search_constants


def _two_state(t):
    sc = two_state_scenario()
    return sc.L(t), sc.mu(t), sc.H(t)


def test_two_state_exact_values_at_zero():
    Q, mu, H = _two_state(0.0)
    assert spectral_gap_constant(Q, mu) == pytest.approx(1.0, abs=1e-10)
    assert weighted_poincare_A(Q, mu, H) == pytest.approx(0.0, abs=1e-10)
    assert weighted_poincare_B(Q, mu, H) == pytest.approx(0.25, abs=1e-10)
    a_bound, b_bound = ab_comparison_bounds(1.0, mu, H)
    assert (a_bound, b_bound) == pytest.approx((0.5, 0.25), abs=1e-12)


@pytest.mark.parametrize("t", [0.3, 1.0, 2.5])
def test_two_state_gap_closed_form(t):
    Q, mu, _ = _two_state(t)
    assert spectral_gap_constant(Q, mu) == pytest.approx(2 / (1 + math.exp(-t)), abs=1e-10)


def test_zero_potential_gives_zero_constants(rng):
    Q, mu = random_reversible_chain(rng, 5)
    H = np.zeros(5)
    assert weighted_poincare_A(Q, mu, H) == pytest.approx(0.0, abs=1e-12)
    assert weighted_poincare_B(Q, mu, H) == 0.0
    assert ab_comparison_bounds(1.7, mu, H) == (0.0, 0.0)


def test_reducible_chain():
    sc = disconnected_halves_scenario()
    Q, mu, H = sc.L(0.5), sc.mu(0.5), sc.H(0.5)
    assert math.isinf(spectral_gap_constant(Q, mu))
    with pytest.raises(InfiniteConstantError):
        weighted_poincare_A(Q, mu, H)
    with pytest.raises(InfiniteConstantError):
        weighted_poincare_B(Q, mu, H)
    with pytest.raises(InfiniteConstantError):
        log_sobolev_constant(Q, mu)
    assert compute_constants(sc, [0.5]).any_infinite


def test_non_reversible_rejected():
    Q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    with pytest.raises(DetailedBalanceError):
        spectral_gap_constant(Q, [0.9, 0.1])


def test_appendix_example_bound():
    sc = endpoint_transfer_scenario(10)
    t = math.pi / 2
    assert weighted_poincare_A(sc.L(t), sc.mu(t), sc.H(t)) <= 44.0
    assert weighted_poincare_B(sc.L(t), sc.mu(t), sc.H(t)) <= 88.0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_against_sphere_grid(rng, n):
    for _ in range(2):
        Q, mu = random_reversible_chain(rng, n)
        H = centred(rng, mu)
        C, A, B = grid_search_constants(Q, mu, H, samples=200_000)
        assert spectral_gap_constant(Q, mu) == pytest.approx(C, abs=1e-4)
        assert weighted_poincare_A(Q, mu, H) == pytest.approx(A, abs=1e-4)
        assert weighted_poincare_B(Q, mu, H) == pytest.approx(B, abs=1e-4)


def test_scaling(rng):
    Q, mu = random_reversible_chain(rng, 4)
    H = centred(rng, mu)
    c = 3.7
    for solver in (weighted_poincare_A, weighted_poincare_B):
        assert solver(c * Q, mu, H) == pytest.approx(solver(Q, mu, H) / c, rel=1e-10)
    assert spectral_gap_constant(c * Q, mu) == pytest.approx(spectral_gap_constant(Q, mu) / c,
                                                            rel=1e-10)
    lsi = log_sobolev_constant(Q, mu).value
    assert log_sobolev_constant(c * Q, mu).value == pytest.approx(lsi / c, rel=1e-6)


def test_maximisers_attain_and_probes_obey(rng):
    Q, mu = random_reversible_chain(rng, 5, density=0.7)
    H = centred(rng, mu)
    A, fa = weighted_poincare_A(Q, mu, H, return_maximizer=True)
    B, fb = weighted_poincare_B(Q, mu, H, return_maximizer=True)
    C = spectral_gap_constant(Q, mu)
    assert np.dot(-H * fa * fa, mu) == pytest.approx(A * dirichlet_form(Q, mu, fa), abs=1e-8)
    assert np.dot(H * fb, mu) ** 2 == pytest.approx(B * dirichlet_form(Q, mu, fb), abs=1e-8)
    for f in rng.standard_normal((1000, 5)):
        f0 = f - f @ mu
        e = dirichlet_form(Q, mu, f0)
        assert np.dot(-H * f0 * f0, mu) <= A * e + 1e-8
        assert np.dot(H * f0, mu) ** 2 <= B * e + 1e-8
        assert variance(f0, mu) <= C * e + 1e-8


def test_basic_estimate_for_all_functions(rng):
    # -int H f^2 <= A E(f) + 2 sqrt(B) |<f, mu>| sqrt(E(f)), no centring needed
    sc = endpoint_transfer_scenario(6)
    for t in np.linspace(0, 2 * math.pi, 9):
        Q, mu, H = sc.L(t), sc.mu(t), sc.H(t)
        A, B = weighted_poincare_A(Q, mu, H), weighted_poincare_B(Q, mu, H)
        for f in rng.standard_normal((200, 7)) + rng.standard_normal((200, 1)):
            e = dirichlet_form(Q, mu, f)
            rhs = A * e + 2 * math.sqrt(B) * abs(f @ mu) * math.sqrt(e)
            assert np.dot(-H * f * f, mu) <= rhs + 1e-8


def test_comparison_bounds_dominate(rng):
    for _ in range(10):
        Q, mu = random_reversible_chain(rng, int(rng.integers(2, 7)))
        H = centred(rng, mu)
        a_bound, b_bound = ab_comparison_bounds(spectral_gap_constant(Q, mu), mu, H)
        assert weighted_poincare_A(Q, mu, H) <= a_bound + 1e-10
        assert weighted_poincare_B(Q, mu, H) <= b_bound + 1e-10


def _two_point_lsi_oracle(count=1_000_000):
    # f = (cos th, sin th), uniform mu, rates 1/2: E(f) = (f1 - f0)^2 / 4
    th = np.linspace(0.0, math.pi, count, endpoint=False)
    a, b = np.cos(th) ** 2, np.sin(th) ** 2
    m = 0.5 * (a + b)
    ent = 0.5 * (xlog1py(a, (a - b) / (2 * m)) + xlog1py(b, (b - a) / (2 * m)))
    e = (np.sin(th) - np.cos(th)) ** 2 / 4
    ok = e > 1e-13  # same relative energy floor as the solver; f has unit norm
    return float(np.max(ent[ok] / e[ok]))


def test_lsi_two_point_matches_grid():
    Q = np.array([[-0.5, 0.5], [0.5, -0.5]])
    res = log_sobolev_constant(Q, np.array([0.5, 0.5]))
    assert res.value == pytest.approx(_two_point_lsi_oracle(), abs=1e-6)


def test_lsi_floor_and_constant_start(rng):
    for _ in range(5):
        Q, mu = random_reversible_chain(rng, int(rng.integers(2, 6)))
        res = log_sobolev_constant(Q, mu)
        assert res.value >= 2 * spectral_gap_constant(Q, mu) - 1e-8
        assert res.optimizer_ratio > 0


def test_constants_report_csv(two_state):
    rep = compute_constants(two_state, [0.0, 1.0])
    text = rep.to_csv("abc")
    lines = text.splitlines()
    assert lines[0] == "# manifest=abc"
    assert lines[1].startswith("t,C,A,B")
    assert rep.at("C", 0.5) == pytest.approx(0.5 * (1 + 2 / (1 + math.exp(-1))))
