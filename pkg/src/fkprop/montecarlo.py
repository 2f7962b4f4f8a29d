"""Path simulation and Feynman-Kac Monte Carlo estimates.

Paths of the chain with rates ``lambda_r L_r`` are drawn by thinning: a
Poisson clock of constant rate ``Lbar`` proposes candidate times, and at a
candidate ``r`` in state ``y`` the path jumps to ``z`` with probability
``lambda_r L_r(y, z) / Lbar``.

The weight ``exp(-int_s^t H_r(X_r) dr)`` needs no quadrature: since
``d/dr log mu_r = -H_r``, the integral over a holding interval
``[a, b]`` in state ``y`` equals ``log mu_a(y) - log mu_b(y)``.

Randomness is organised in fixed-size blocks of paths.  Block ``k`` draws
from a Philox stream keyed by ``(seed, k)``, so results do not depend on
how blocks are spread over worker threads.
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, DominatingRateError
from .model import as_function, simpson_grid

BLOCK = 8192
SAFETY = 1.05
MAX_RESCANS = 3
DUMP_CAP = 10_000


@dataclass
class PathSample:
    jump_times: np.ndarray
    states: np.ndarray
    weight: float
    s: float
    t: float

    def __post_init__(self):
        if self.states.size != self.jump_times.size + 1:
            raise DomainError("a path visits one more state than it has jumps")
        if np.any(np.diff(self.jump_times) <= 0):
            raise DomainError("jump times must be strictly increasing")
        if not self.weight > 0:
            raise DomainError("path weight must be positive")

    @property
    def final_state(self) -> int:
        return int(self.states[-1])


@dataclass
class EstimatorResult:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    dominating_rate: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def worker_count() -> int:
    """Thread cap from ``FKPROP_THREADS`` (default: CPU count)."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get("FKPROP_THREADS")
    if raw:
        try:
            return max(1, min(cpus, int(raw)))
        except ValueError:
            pass
    return cpus


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one block of paths."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


def dominating_rate(scenario, s: float, t: float, step: float | None = None) -> float:
    """``1.05 * sup lambda_r max_x |L_r(x,x)|`` scanned on a grid of spacing ``step``."""
    step = scenario.solver.step if step is None else step
    times = simpson_grid(s, t, step) if t > s else np.array([s])
    sup = 0.0
    for r in times:
        L = scenario.generators.at(float(r))
        sup = max(sup, float(scenario.speed(float(r))) * float(np.max(-np.diag(L))))
    return SAFETY * sup


class _Engine:
    """Vectorised thinning for one ``(scenario, s, t)``."""

    def __init__(self, scenario, s: float, t: float, lbar: float):
        if not 0 <= s <= t:
            raise DomainError(f"need 0 <= s <= t, got s={s}, t={t}")
        self.scenario = scenario
        self.s = float(s)
        self.t = float(t)
        self.lbar = float(lbar)
        self.n = scenario.n_states

    def _log_mu(self, times, states):
        logmu = self.scenario.measures.log_measure(np.asarray(times, dtype=float))
        return np.take_along_axis(np.atleast_2d(logmu), states[:, None], axis=1)[:, 0]

    def run(self, starts: np.ndarray, rng: np.random.Generator, weighted: bool):
        """Final states and log-weights for paths started at ``starts``."""
        m = starts.size
        state = starts.astype(np.intp).copy()
        logw = np.zeros(m)
        if self.lbar <= 0 or self.t == self.s:
            if weighted:
                logw += self._log_mu(np.full(m, self.t), state) - self._log_mu(
                    np.full(m, self.s), state)
            return state, logw
        now = np.full(m, self.s)
        seg = np.full(m, self.s)  # start of the current holding interval
        active = np.arange(m)
        while active.size:
            now[active] += rng.exponential(1.0 / self.lbar, active.size)
            done = now[active] >= self.t
            fin = active[done]
            if weighted and fin.size:
                logw[fin] += (self._log_mu(np.full(fin.size, self.t), state[fin])
                              - self._log_mu(seg[fin], state[fin]))
            active = active[~done]
            if not active.size:
                break
            r = now[active]
            y = state[active]
            rates = self.scenario.generators.exit_rows(r, y)
            rates *= np.asarray(self.scenario.speed(r), dtype=float)[:, None]
            total = -rates[np.arange(active.size), y]
            if np.any(total > self.lbar * (1 + 1e-12)):
                k = int(np.argmax(total))
                raise DominatingRateError(
                    f"rate {total[k]:.6g} at r={r[k]:.6g} exceeds the dominating rate "
                    f"{self.lbar:.6g}")
            rates[np.arange(active.size), y] = 0.0
            u = rng.random(active.size) * self.lbar
            cum = np.cumsum(rates, axis=1)
            jump = u < cum[:, -1]
            target = np.argmax(cum > u[:, None], axis=1)
            movers = active[jump]
            if movers.size:
                if weighted:
                    logw[movers] += (self._log_mu(now[movers], state[movers])
                                     - self._log_mu(seg[movers], state[movers]))
                seg[movers] = now[movers]
                state[movers] = target[jump]
        return state, logw


def _with_rescan(scenario, s, t, job):
    """Run ``job(lbar)``; on a dominating-rate failure rescan on a finer grid."""
    step = scenario.solver.step
    for attempt in range(MAX_RESCANS + 1):
        lbar = dominating_rate(scenario, s, t, step)
        try:
            return job(lbar), lbar
        except DominatingRateError:
            if attempt == MAX_RESCANS:
                raise
            step /= 10.0


def _estimate(scenario, s, x, t, f, n_paths, seed, weighted) -> EstimatorResult:
    if n_paths < 2:
        raise DomainError("need at least 2 paths")
    n = scenario.n_states
    if not 0 <= int(x) < n:
        raise DomainError(f"start state {x} outside 0..{n - 1}")
    f = as_function(f, n)
    n_blocks = math.ceil(n_paths / BLOCK)

    def job(lbar):
        eng = _Engine(scenario, s, t, lbar)

        def block(k):
            size = min(BLOCK, n_paths - k * BLOCK)
            state, logw = eng.run(np.full(size, int(x)), block_rng(seed, k), weighted)
            return np.exp(logw) * f[state] if weighted else f[state]

        workers = min(worker_count(), n_blocks)
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(block, range(n_blocks)))
        else:
            parts = [block(k) for k in range(n_blocks)]
        return np.concatenate(parts)

    values, lbar = _with_rescan(scenario, s, t, job)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n_paths))
    return EstimatorResult(mean, se, int(n_paths), int(seed), lbar)


def fk_estimate(scenario, s: float, x: int, t: float, f, n_paths: int,
                seed: int = 0) -> EstimatorResult:
    """Monte Carlo estimate of ``(q_{s,t} f)(x)`` with its standard error."""
    return _estimate(scenario, s, x, t, f, n_paths, seed, weighted=True)


def markov_estimate(scenario, s: float, x: int, t: float, f, n_paths: int,
                    seed: int = 0) -> EstimatorResult:
    """Monte Carlo estimate of ``(p_{s,t} f)(x)``: unit weights."""
    return _estimate(scenario, s, x, t, f, n_paths, seed, weighted=False)


def simulate_path(scenario, s: float, x: int, t: float,
                  rng: np.random.Generator | None = None, lbar: float | None = None) -> PathSample:
    """One path with its jump record and Feynman-Kac weight."""
    if not 0 <= s <= t:
        raise DomainError(f"need 0 <= s <= t, got s={s}, t={t}")
    n = scenario.n_states
    if not 0 <= int(x) < n:
        raise DomainError(f"start state {x} outside 0..{n - 1}")
    rng = np.random.default_rng() if rng is None else rng
    lbar = dominating_rate(scenario, s, t) if lbar is None else lbar
    log_mu = scenario.measures.log_measure
    y = int(x)
    r = seg = float(s)
    times, states = [], [y]
    logw = 0.0
    while lbar > 0:
        r += rng.exponential(1.0 / lbar)
        if r >= t:
            break
        row = scenario.speed(r) * scenario.generators.at(r)[y]
        if -row[y] > lbar * (1 + 1e-12):
            raise DominatingRateError(f"rate {-row[y]:.6g} at r={r:.6g} exceeds {lbar:.6g}")
        row[y] = 0.0
        u = rng.random() * lbar
        cum = np.cumsum(row)
        if u < cum[-1]:
            z = int(np.argmax(cum > u))
            logw += log_mu(r)[y] - log_mu(seg)[y]
            seg = r
            y = z
            times.append(r)
            states.append(y)
    logw += log_mu(float(t))[y] - log_mu(seg)[y]
    return PathSample(np.array(times), np.array(states, dtype=int), math.exp(logw), float(s),
                      float(t))


def paths_csv(scenario, s: float, x: int, t: float, n_paths: int, seed: int = 0) -> str:
    """Per-path dump (index, jumps, final state, weight), capped at 10^4 paths."""
    n_paths = min(int(n_paths), DUMP_CAP)
    rng = block_rng(seed, 0)
    lbar = dominating_rate(scenario, s, t)
    buf = io.StringIO()
    buf.write("path,n_jumps,final_state,weight\n")
    for k in range(n_paths):
        p = simulate_path(scenario, s, x, t, rng, lbar)
        buf.write(f"{k},{p.jump_times.size},{p.final_state},{p.weight!r}\n")
    return buf.getvalue()
