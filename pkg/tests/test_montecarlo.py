import numpy as np
import pytest

from fkprop.errors import DomainError
from fkprop.montecarlo import (block_rng, dominating_rate, fk_estimate, markov_estimate,
                               paths_csv, simulate_path, worker_count)
from fkprop.propagator import markov_propagator, solve_backward
from fkprop.scenarios import endpoint_transfer_scenario, two_state_scenario


def test_dominating_rate_covers_exit_rates(two_state):
    lbar = dominating_rate(two_state, 0.0, 1.0)
    exits = [-np.min(np.diag(two_state.L(r))) for r in np.linspace(0, 1, 101)]
    assert lbar >= max(exits)


def test_path_record_is_consistent(two_state):
    path = simulate_path(two_state, 0.0, 0, 1.0, np.random.default_rng(1))
    assert path.states.size == path.jump_times.size + 1
    assert np.all((path.jump_times > 0) & (path.jump_times < 1))
    assert path.weight > 0


def test_frozen_chain_weight_is_measure_ratio():
    sc = two_state_scenario(lam=0.0)
    path = simulate_path(sc, 0.0, 1, 1.0, np.random.default_rng(0))
    assert path.jump_times.size == 0
    assert path.weight == pytest.approx(sc.mu(1.0)[1] / sc.mu(0.0)[1], rel=1e-12)


@pytest.mark.parametrize("sc", [two_state_scenario(), endpoint_transfer_scenario(5, t_end=1.0)])
def test_estimates_agree_with_ode(sc):
    f = np.arange(sc.n_states, dtype=float)
    q = solve_backward(sc, 0.0, 1.0).entries
    res = fk_estimate(sc, 0.0, 0, 1.0, f, 50_000, seed=11)
    assert abs(res.mean - (q @ f)[0]) <= 4 * res.std_error
    p = markov_propagator(sc, 0.0, 1.0).entries
    res = markov_estimate(sc, 0.0, 0, 1.0, f, 50_000, seed=12)
    assert abs(res.mean - (p @ f)[0]) <= 4 * res.std_error


def test_reruns_are_identical_and_thread_independent(monkeypatch, two_state):
    monkeypatch.setenv("FKPROP_THREADS", "1")
    a = fk_estimate(two_state, 0.0, 0, 1.0, [0.0, 1.0], 20_000, seed=5)
    monkeypatch.setenv("FKPROP_THREADS", "4")
    b = fk_estimate(two_state, 0.0, 0, 1.0, [0.0, 1.0], 20_000, seed=5)
    assert a.as_dict() == b.as_dict()
    assert paths_csv(two_state, 0.0, 0, 1.0, 50, seed=3) == paths_csv(two_state, 0.0, 0, 1.0, 50,
                                                                      seed=3)


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("FKPROP_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("FKPROP_THREADS", "junk")
    assert worker_count() >= 1


def test_block_streams_differ():
    assert block_rng(1, 0).random() != block_rng(1, 1).random()
    assert block_rng(1, 0).random() == block_rng(1, 0).random()


def test_dump_is_capped(two_state):
    text = paths_csv(two_state, 0.0, 0, 0.01, 20_000)
    assert len(text.splitlines()) == 10_001


def test_argument_checks(two_state):
    with pytest.raises(DomainError):
        fk_estimate(two_state, 0.0, 5, 1.0, [1.0, 1.0], 100)
    with pytest.raises(DomainError):
        fk_estimate(two_state, 0.5, 0, 0.2, [1.0, 1.0], 100)
    with pytest.raises(DomainError):
        fk_estimate(two_state, 0.0, 0, 1.0, [1.0, 1.0], 1)


def test_trivial_estimators():
    from fkprop.generators import EdgeSet
    from fkprop.scenarios import homogeneous_scenario
    flat = homogeneous_scenario([0.3, 0.7], EdgeSet([(0, 1)]))
    res = fk_estimate(flat, 0.0, 0, 1.0, [1.0, 1.0], 1000, seed=1)
    assert res.mean == 1.0 and res.std_error == 0.0
    res = markov_estimate(two_state_scenario(), 0.0, 1, 1.0, [1.0, 1.0], 1000)
    assert res.mean == 1.0 and res.std_error == 0.0
    frozen = two_state_scenario(lam=0.0)
    res = fk_estimate(frozen, 0.0, 1, 1.0, [2.0, 3.0], 1000)
    assert res.std_error <= 1e-14  # identical samples; only rounding in the mean
    assert res.mean == pytest.approx(3.0 * frozen.mu(1.0)[1] / frozen.mu(0.0)[1], rel=1e-12)


def test_holding_time_at_frozen_rates():
    from fkprop.generators import EdgeSet
    from fkprop.scenarios import homogeneous_scenario
    sc = homogeneous_scenario([0.7, 0.3], EdgeSet([(0, 1)]), lam=20.0, t_end=3.0)
    rng = np.random.default_rng(4)
    lbar = dominating_rate(sc, 0.0, 3.0)
    holds = []
    for _ in range(3000):  # censoring at t = 3 has probability e^{-12.9}
        p = simulate_path(sc, 0.0, 0, 3.0, rng, lbar)
        if p.jump_times.size:
            holds.append(p.jump_times[0])
    holds = np.array(holds)
    rate = -20.0 * sc.L(0.0)[0, 0]
    se = holds.std(ddof=1) / np.sqrt(holds.size)
    assert abs(holds.mean() - 1 / rate) <= 3 * se


def test_invariance_by_sampling(two_state):
    # averaging (q f)(x) over x ~ mu_s recovers <f, mu_t>
    f = np.array([0.0, 1.0])
    mu0 = two_state.mu(0.0)
    est = [fk_estimate(two_state, 0.0, x, 1.0, f, 40_000, seed=x) for x in range(2)]
    mean = sum(m * e.mean for m, e in zip(mu0, est))
    se = np.sqrt(sum((m * e.std_error) ** 2 for m, e in zip(mu0, est)))
    assert abs(mean - f @ two_state.mu(1.0)) <= 3 * se
