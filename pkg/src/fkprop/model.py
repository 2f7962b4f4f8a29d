"""Finite state spaces, time grids and Hamiltonian-driven measure families.

A measure family is the curve

    mu_t(x) = exp(-Ham_t(x)) mu_0(x) / Z_t

on a finite set, where ``Ham_t`` is supplied by a schedule object.  Its
negative logarithmic time derivative

    H_t = d/dt Ham_t - <d/dt Ham_t, mu_t>

is the Feynman-Kac potential used everywhere else in the package.

Probability vectors and functions on the state space are plain 1-D numpy
arrays; the helpers :func:`as_probability` and :func:`as_function` validate
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .errors import DomainError, InvalidScheduleError

#: tolerance for identities that hold in exact arithmetic
EXACT_TOL = 1e-12
#: tolerance for checks involving quadrature of smooth integrands
QUADRATURE_TOL = 1e-8


@dataclass(frozen=True)
class StateSpace:
    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise DomainError("a state space needs at least two states")
        if len(set(labels)) != len(labels):
            raise DomainError("state labels must be distinct")

    @classmethod
    def range(cls, n: int) -> "StateSpace":
        return cls(tuple(range(n)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"unknown state {label!r}") from None


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_start = tau_0 < ... < tau_K = t_end``."""

    t_start: float
    t_end: float
    intervals: int

    def __post_init__(self):
        if self.intervals < 1:
            raise DomainError("a time grid needs at least one interval")
        if not self.t_end > self.t_start:
            raise DomainError("t_end must exceed t_start")

    @classmethod
    def from_step(cls, t_start: float, t_end: float, step: float) -> "TimeGrid":
        if step <= 0:
            raise DomainError("step must be positive")
        k = max(1, int(math.ceil((t_end - t_start) / step - 1e-9)))
        return cls(t_start, t_end, k)

    @property
    def step(self) -> float:
        return (self.t_end - self.t_start) / self.intervals

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.intervals + 1)

    def covers(self, a: float, b: float) -> bool:
        return self.t_start <= a + 1e-12 and b <= self.t_end + 1e-12


def as_probability(weights, tol: float = EXACT_TOL) -> np.ndarray:
    """Validate a strictly positive probability vector and return it as float array."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise DomainError("probability vector must be 1-D with at least two entries")
    if not np.all(np.isfinite(w)):
        raise DomainError("probability vector has non-finite entries")
    if np.any(w <= 0):
        raise DomainError("probability vector must be strictly positive")
    if abs(w.sum() - 1.0) > tol:
        raise DomainError(f"probability vector sums to {w.sum():.17g}, not 1")
    return w


def as_function(values, size: int | None = None) -> np.ndarray:
    f = np.asarray(values, dtype=float)
    if f.ndim != 1:
        raise DomainError("a function on S must be a 1-D array")
    if size is not None and f.size != size:
        raise DomainError(f"function has {f.size} entries, state space has {size}")
    if not np.all(np.isfinite(f)):
        raise DomainError("function values must be finite")
    return f


def expectation(f, mu) -> float:
    return float(np.dot(f, mu))


def variance(f, mu) -> float:
    m = np.dot(f, mu)
    return float(np.dot((f - m) ** 2, mu))


# --------------------------------------------------------------------------
# Hamiltonian schedules
# --------------------------------------------------------------------------


class HamiltonianSchedule:
    """Base class: ``value(t)`` is Ham_t, ``rate(t)`` its time derivative.

    Both accept a scalar or an array of times and return arrays of shape
    ``np.shape(t) + (n_states,)``.
    """

    n_states: int
    derivative_convention = "exact"

    def value(self, t):
        raise NotImplementedError

    def rate(self, t):
        raise NotImplementedError

    def restrict(self, indices: Sequence[int]) -> "HamiltonianSchedule":
        return SubsetSchedule(self, tuple(int(i) for i in indices))

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class LinearSchedule(HamiltonianSchedule):
    """``Ham_t = t * base``: the exponential family generated by ``base``."""

    base: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", as_function(self.base))

    @property
    def n_states(self):
        return self.base.size

    def value(self, t):
        return np.multiply.outer(np.asarray(t, dtype=float), self.base)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.base, t.shape + self.base.shape).copy()

    def describe(self):
        return {"form": "linear", "base": self.base.tolist()}


@dataclass(frozen=True, eq=False)
class PiecewiseLinearSchedule(HamiltonianSchedule):
    """Linear interpolation of tabulated Hamiltonians between knot times.

    Values are taken relative to the first knot, which must sit at time 0,
    so that ``mu_0`` is reproduced exactly.  After the last knot the
    Hamiltonian is held constant.  At knots the derivative is the right
    derivative.
    """

    knots: np.ndarray
    values: np.ndarray
    derivative_convention = "right"

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise InvalidScheduleError("piecewise_linear needs at least two knots")
        if knots[0] != 0.0:
            raise InvalidScheduleError("first knot must be at t = 0")
        if np.any(np.diff(knots) <= 0):
            raise InvalidScheduleError("knots must be strictly increasing")
        if vals.ndim != 2 or vals.shape[0] != knots.size:
            raise InvalidScheduleError("values must have one row per knot")
        if not np.all(np.isfinite(vals)):
            raise InvalidScheduleError("non-finite Hamiltonian value")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", vals - vals[0])
        object.__setattr__(self, "_slopes", np.diff(vals, axis=0) / np.diff(knots)[:, None])

    @property
    def n_states(self):
        return self.values.shape[1]

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape + (self.n_states,))
        for j in range(self.n_states):
            out[..., j] = np.interp(t, self.knots, self.values[:, j])
        return out

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        inside = (idx >= 0) & (idx < self.knots.size - 1)
        slopes = self._slopes[np.clip(idx, 0, self.knots.size - 2)]
        return np.where(inside[..., None], slopes, 0.0)

    def describe(self):
        return {"form": "piecewise_linear", "knots": self.knots.tolist(),
                "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class EndpointTransferSchedule(HamiltonianSchedule):
    """Mass oscillating between the two ends of ``{0, ..., n}``.

    Relative to a uniform ``mu_0``::

        mu_t(0) = (1 + eps sin(omega t)) / (n + 1)
        mu_t(n) = (1 - eps sin(omega t)) / (n + 1)

    and all interior weights stay at ``1 / (n + 1)``.  Since ``Z_t = 1`` the
    rate is already centred, and ``max |H_t| <= eps omega / (1 - eps)``.
    """

    n: int
    eps: float
    omega: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidScheduleError("endpoint_transfer needs integer n >= 2")
        if not 0.0 < self.eps < 1.0:
            raise InvalidScheduleError("endpoint_transfer needs 0 < eps < 1")
        if not math.isfinite(self.omega):
            raise InvalidScheduleError("omega must be finite")

    @property
    def n_states(self):
        return self.n + 1

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.n + 1,))
        s = self.eps * np.sin(self.omega * t)
        out[..., 0] = -np.log1p(s)
        out[..., self.n] = -np.log1p(-s)
        return out

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.n + 1,))
        s = self.eps * np.sin(self.omega * t)
        ds = self.eps * self.omega * np.cos(self.omega * t)
        out[..., 0] = -ds / (1.0 + s)
        out[..., self.n] = ds / (1.0 - s)
        return out

    def mass_rate_at_zero(self, t):
        """Time derivative of ``mu_t(0)`` for a uniform ``mu_0``."""
        return self.eps * self.omega * np.cos(self.omega * np.asarray(t, float)) / (self.n + 1)

    def describe(self):
        return {"form": "endpoint_transfer", "n": int(self.n), "eps": float(self.eps),
                "omega": float(self.omega)}


@dataclass(frozen=True, eq=False)
class SubsetSchedule(HamiltonianSchedule):
    base: HamiltonianSchedule
    indices: tuple

    @property
    def n_states(self):
        return len(self.indices)

    @property
    def derivative_convention(self):
        return self.base.derivative_convention

    def value(self, t):
        return self.base.value(t)[..., list(self.indices)]

    def rate(self, t):
        return self.base.rate(t)[..., list(self.indices)]

    def describe(self):
        return {"form": "subset", "indices": list(self.indices), "base": self.base.describe()}


# --------------------------------------------------------------------------
# measure family
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasureFamily:
    mu0: np.ndarray
    hamiltonian: HamiltonianSchedule
    _log_mu0: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu0 = as_probability(self.mu0)
        if self.hamiltonian.n_states != mu0.size:
            raise DomainError("schedule and mu0 disagree on the number of states")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "_log_mu0", np.log(mu0))

    @property
    def n_states(self) -> int:
        return self.mu0.size

    def log_weights(self, t):
        """Unnormalised, max-shifted log weights; broadcasts over ``t``."""
        a = -self.hamiltonian.value(t) + self._log_mu0
        if not np.all(np.isfinite(a)):
            raise InvalidScheduleError(f"non-finite Hamiltonian value at t={t}")
        return a - a.max(axis=-1, keepdims=True)

    def log_measure(self, t):
        a = self.log_weights(t)
        return a - np.log(np.exp(a).sum(axis=-1, keepdims=True))

    def restrict(self, indices: Sequence[int]) -> "MeasureFamily":
        idx = list(indices)
        sub = self.mu0[idx]
        return MeasureFamily(sub / sub.sum(), self.hamiltonian.restrict(idx))


def _check_time(t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or not np.all(np.isfinite(t_arr)):
        raise DomainError(f"times must be finite and >= 0, got {t}")
    return t_arr


def measure_at(family: MeasureFamily, t) -> np.ndarray:
    """Return ``mu_t``; for an array of times, one row per time."""
    t = _check_time(t)
    w = np.exp(family.log_weights(t))
    return w / w.sum(axis=-1, keepdims=True)


def h_rate_at(family: MeasureFamily, t) -> np.ndarray:
    """Return the centred rate ``H_t`` (right derivative at schedule knots)."""
    t = _check_time(t)
    mu = measure_at(family, t)
    r = family.hamiltonian.rate(t)
    if not np.all(np.isfinite(r)):
        raise InvalidScheduleError(f"non-finite Hamiltonian derivative at t={t}")
    return r - np.sum(r * mu, axis=-1, keepdims=True)


def simpson_grid(a: float, b: float, step: float) -> np.ndarray:
    """Uniform grid on ``[a, b]`` with an even number of intervals, spacing <= step."""
    if b < a:
        raise DomainError("simpson_grid needs a <= b")
    if b == a:
        return np.array([a, b])
    k = max(2, int(math.ceil((b - a) / step - 1e-9)))
    k += k % 2
    return np.linspace(a, b, k + 1)


def integrate(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Composite Simpson along axis 0; zero-length intervals integrate to 0."""
    if times[-1] == times[0]:
        return np.zeros(values.shape[1:])
    return simpson(values, x=times, axis=0)


def reconstruct_measure(family: MeasureFamily, t: float, grid: TimeGrid) -> np.ndarray:
    """Rebuild ``mu_t`` from ``mu_0`` and the integral of ``H`` over ``[0, t]``.

    Independent of :func:`measure_at`'s closed form: only the centred rate
    enters, integrated by composite Simpson at the resolution of ``grid``.
    """
    if t < 0 or not grid.covers(0.0, t) or grid.t_start > 0:
        raise DomainError(f"grid [{grid.t_start}, {grid.t_end}] does not span [0, {t}]")
    times = simpson_grid(0.0, t, grid.step)
    integral = integrate(h_rate_at(family, times), times)
    logw = np.log(family.mu0) - integral
    w = np.exp(logw - logw.max())
    return w / w.sum()
