"""Generator (Q-matrix) families, speed schedules and Dirichlet forms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DetailedBalanceError, DomainError, InvalidScheduleError
from .model import EXACT_TOL, MeasureFamily, as_function, measure_at

DB_TOL = 1e-10


# --------------------------------------------------------------------------
# edge sets and speed schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeSet:
    """Undirected edges between distinct states, stored as sorted pairs."""

    pairs: frozenset

    def __init__(self, pairs: Iterable[Sequence[int]]):
        normalized = set()
        for pair in pairs:
            x, y = (int(v) for v in pair)
            if x == y:
                raise DomainError(f"self-loop at state {x}")
            key = (min(x, y), max(x, y))
            if key in normalized:
                raise DomainError(f"duplicate edge {key}")
            normalized.add(key)
        object.__setattr__(self, "pairs", frozenset(normalized))

    @classmethod
    def path(cls, n_states: int) -> "EdgeSet":
        return cls((i, i + 1) for i in range(n_states - 1))

    @classmethod
    def complete(cls, n_states: int) -> "EdgeSet":
        return cls((i, j) for i in range(n_states) for j in range(i + 1, n_states))

    def adjacency(self, n_states: int) -> np.ndarray:
        adj = np.zeros((n_states, n_states), dtype=bool)
        for x, y in self.pairs:
            if y >= n_states:
                raise DomainError(f"edge ({x}, {y}) outside a {n_states}-state space")
            adj[x, y] = adj[y, x] = True
        return adj

    def restrict(self, indices: Sequence[int]) -> "EdgeSet":
        pos = {int(s): k for k, s in enumerate(indices)}
        return EdgeSet((pos[x], pos[y]) for x, y in self.pairs if x in pos and y in pos)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class SpeedSchedule:
    """Nonnegative, continuous speed ``lambda_t``.

    A single knot means a constant schedule; otherwise linear interpolation
    between knots with constant extension outside them.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if knots.shape != values.shape or knots.ndim != 1 or knots.size == 0:
            raise InvalidScheduleError("speed knots and values must be matching 1-D arrays")
        if np.any(np.diff(knots) <= 0):
            raise InvalidScheduleError("speed knots must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidScheduleError("speed values must be finite and >= 0")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float) -> "SpeedSchedule":
        return cls(np.array([0.0]), np.array([float(value)]))

    @property
    def is_constant(self) -> bool:
        return self.values.size == 1 or bool(np.all(self.values == self.values[0]))

    def __call__(self, t):
        if self.values.size == 1:
            return np.full(np.shape(t), self.values[0]) if np.ndim(t) else float(self.values[0])
        out = np.interp(t, self.knots, self.values)
        return out if np.ndim(t) else float(out)

    def scaled(self, factor: float) -> "SpeedSchedule":
        return SpeedSchedule(self.knots, self.values * factor)

    def sup(self) -> float:
        return float(self.values.max())

    def describe(self) -> dict:
        if self.values.size == 1:
            return {"form": "constant", "value": float(self.values[0])}
        return {"form": "piecewise_linear", "knots": self.knots.tolist(),
                "values": self.values.tolist()}


# --------------------------------------------------------------------------
# single-matrix operations
# --------------------------------------------------------------------------


def check_qmatrix(Q, tol: float = EXACT_TOL) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DomainError("a Q-matrix must be square")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        raise DomainError("Q-matrix has negative off-diagonal rates")
    if np.max(np.abs(Q.sum(axis=1))) > tol * max(1.0, np.abs(Q).max()):
        raise DomainError("Q-matrix rows do not sum to zero")
    return Q


def _with_diagonal(rates: np.ndarray) -> np.ndarray:
    np.fill_diagonal(rates, 0.0)
    np.fill_diagonal(rates, -rates.sum(axis=1))
    return rates


def metropolis_rates(mu: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """Random-walk Metropolis Q-matrix ``1/2 min(mu(y)/mu(x), 1)`` on the edges."""
    logmu = np.log(mu)
    ratio = np.exp(np.minimum(logmu[None, :] - logmu[:, None], 0.0))
    return _with_diagonal(np.where(adjacency, 0.5 * ratio, 0.0))


def metropolis_generator(measures: MeasureFamily, edges: EdgeSet, t: float) -> np.ndarray:
    mu = measure_at(measures, t)
    return metropolis_rates(mu, edges.adjacency(mu.size))


def detailed_balance_residual(Q, mu) -> float:
    Q = np.asarray(Q, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if Q.shape != (mu.size, mu.size):
        raise DomainError(f"Q has shape {Q.shape}, measure has {mu.size} states")
    flux = mu[:, None] * Q
    return float(np.max(np.abs(flux - flux.T)))


def apply_generator(Q, f) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    f = np.asarray(f, dtype=float)
    if Q.shape[1] != f.shape[0]:
        raise DomainError(f"Q has {Q.shape[1]} columns, function has {f.shape[0]} entries")
    return Q @ f


def dirichlet_form(Q, mu, f, g=None, tol: float = DB_TOL) -> float:
    """Energy ``E(f, g) = 1/2 sum (f(y)-f(x)) (g(y)-g(x)) Q(x,y) mu(x)``.

    Raises :class:`DetailedBalanceError` when ``Q`` is not reversible for
    ``mu``, because then the form is not the one induced by ``-Q``.
    """
    Q = np.asarray(Q, dtype=float)
    mu = np.asarray(mu, dtype=float)
    residual = detailed_balance_residual(Q, mu)
    if residual > tol:
        raise DetailedBalanceError(f"detailed-balance residual {residual:.3e} exceeds {tol:.0e}")
    f = as_function(f, mu.size)
    g = f if g is None else as_function(g, mu.size)
    df = f[None, :] - f[:, None]
    dg = g[None, :] - g[:, None]
    off = Q - np.diag(np.diag(Q))
    return float(0.5 * np.sum(df * dg * off * mu[:, None]))


# --------------------------------------------------------------------------
# generator families
# --------------------------------------------------------------------------


class GeneratorFamily:
    """Curve ``t -> L_t`` of Q-matrices together with a speed ``lambda_t``."""

    speed: SpeedSchedule
    reversible = True

    @property
    def n_states(self) -> int:
        raise NotImplementedError

    def at(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def rate_matrix(self, t: float) -> np.ndarray:
        return self.speed(t) * self.at(t)

    def exit_rows(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Rows ``L_t(x, .)`` for paired arrays of times and states."""
        out = np.empty((len(times), self.n_states))
        cache = {}
        for k, (t, x) in enumerate(zip(times, states)):
            t = float(t)
            if t not in cache:
                cache[t] = self.at(t)
            out[k] = cache[t][x]
        return out

    def with_speed(self, speed: SpeedSchedule) -> "GeneratorFamily":
        raise NotImplementedError

    def restrict(self, indices: Sequence[int]) -> "GeneratorFamily":
        return SubsetGenerator(self, tuple(int(i) for i in indices))

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class MetropolisFamily(GeneratorFamily):
    measures: MeasureFamily
    edges: EdgeSet
    speed: SpeedSchedule = field(default_factory=lambda: SpeedSchedule.constant(1.0))
    _adj: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_adj", self.edges.adjacency(self.measures.n_states))

    @property
    def n_states(self):
        return self.measures.n_states

    def at(self, t):
        return metropolis_rates(measure_at(self.measures, t), self._adj)

    def exit_rows(self, times, states):
        logmu = self.measures.log_measure(np.asarray(times, dtype=float))
        own = np.take_along_axis(logmu, np.asarray(states)[:, None], axis=1)
        rates = 0.5 * np.exp(np.minimum(logmu - own, 0.0)) * self._adj[states]
        rates[np.arange(len(states)), states] = 0.0
        rates[np.arange(len(states)), states] = -rates.sum(axis=1)
        return rates

    def with_speed(self, speed):
        return MetropolisFamily(self.measures, self.edges, speed)

    def describe(self):
        return {"builder": "metropolis", "edges": sorted(list(p) for p in self.edges.pairs),
                "lambda": self.speed.describe()}


@dataclass(frozen=True, eq=False)
class TabulatedFamily(GeneratorFamily):
    """Q-matrices given at knot times, linearly interpolated in between.

    Off-diagonal rates are interpolated and the diagonal is rebuilt from the
    row sums; outside the knot range the nearest matrix is used.
    """

    knots: np.ndarray
    matrices: np.ndarray
    speed: SpeedSchedule = field(default_factory=lambda: SpeedSchedule.constant(1.0))

    def __post_init__(self):
        knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[0] != knots.size:
            raise DomainError("need one square matrix per knot")
        if np.any(np.diff(knots) <= 0):
            raise DomainError("generator knots must be strictly increasing")
        for m in mats:
            check_qmatrix(m, tol=1e-10)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "matrices", mats)

    @property
    def n_states(self):
        return self.matrices.shape[1]

    def at(self, t):
        k = self.knots
        if t <= k[0]:
            rates = self.matrices[0].copy()
        elif t >= k[-1]:
            rates = self.matrices[-1].copy()
        else:
            i = int(np.searchsorted(k, t, side="right")) - 1
            w = (t - k[i]) / (k[i + 1] - k[i])
            rates = (1 - w) * self.matrices[i] + w * self.matrices[i + 1]
        return _with_diagonal(rates)

    def with_speed(self, speed):
        return TabulatedFamily(self.knots, self.matrices, speed)

    def describe(self):
        return {"builder": "tabulated", "knots": self.knots.tolist(),
                "matrices": self.matrices.tolist(), "lambda": self.speed.describe()}


@dataclass(frozen=True, eq=False)
class CallableFamily(GeneratorFamily):
    """Family defined by an arbitrary builder ``t -> Q``.  Assumed non-reversible."""

    builder: Callable[[float], np.ndarray]
    size: int
    speed: SpeedSchedule = field(default_factory=lambda: SpeedSchedule.constant(1.0))
    reversible: bool = False

    @property
    def n_states(self):
        return self.size

    def at(self, t):
        return np.asarray(self.builder(t), dtype=float)

    def with_speed(self, speed):
        return CallableFamily(self.builder, self.size, speed, self.reversible)

    def describe(self):
        return {"builder": "callable", "lambda": self.speed.describe()}


@dataclass(frozen=True, eq=False)
class SubsetGenerator(GeneratorFamily):
    base: GeneratorFamily
    indices: tuple

    @property
    def speed(self):
        return self.base.speed

    @property
    def reversible(self):
        return self.base.reversible

    @property
    def n_states(self):
        return len(self.indices)

    def at(self, t):
        idx = list(self.indices)
        return _with_diagonal(self.base.at(t)[np.ix_(idx, idx)].copy())

    def exit_rows(self, times, states):
        idx = np.asarray(self.indices)
        rows = self.base.exit_rows(times, idx[np.asarray(states)])[:, idx]
        k = np.arange(len(states))
        rows[k, states] = 0.0
        rows[k, states] = -rows.sum(axis=1)
        return rows

    def with_speed(self, speed):
        return SubsetGenerator(self.base.with_speed(speed), self.indices)

    def describe(self):
        return {"builder": "subset", "indices": list(self.indices), "base": self.base.describe()}
