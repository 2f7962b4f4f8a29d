"""Scenario assembly, the worked example chains and the JSON config loader."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, DomainError, FkpropError, InfeasibleDriftError
from .generators import (CallableFamily, EdgeSet, GeneratorFamily, MetropolisFamily,
                         SpeedSchedule, TabulatedFamily, check_qmatrix,
                         detailed_balance_residual)
from .inequalities import (spectral_gap_constant, weighted_poincare_A,
                           weighted_poincare_B)
from .model import (EndpointTransferSchedule, LinearSchedule, MeasureFamily,
                    PiecewiseLinearSchedule, StateSpace, TimeGrid, h_rate_at,
                    measure_at, variance)
from .propagator import SolverConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Scenario:
    """One run unit: measures, generators with speed, time grid and solver."""

    measures: MeasureFamily
    generators: GeneratorFamily
    grid: TimeGrid
    solver: SolverConfig = field(default_factory=SolverConfig)
    subset: tuple | None = None
    states: StateSpace | None = None
    name: str = ""

    def __post_init__(self):
        if self.generators.n_states != self.measures.n_states:
            raise DomainError("generator and measure family disagree on the state count")
        if self.states is None:
            object.__setattr__(self, "states", StateSpace.range(self.measures.n_states))
        if self.subset is not None:
            object.__setattr__(self, "subset", tuple(int(i) for i in self.subset))

    @property
    def n_states(self) -> int:
        return self.measures.n_states

    @property
    def speed(self) -> SpeedSchedule:
        return self.generators.speed

    def mu(self, t):
        return measure_at(self.measures, t)

    def H(self, t):
        return h_rate_at(self.measures, t)

    def L(self, t):
        return self.generators.at(t)

    def with_speed(self, speed: SpeedSchedule | float) -> "Scenario":
        if not isinstance(speed, SpeedSchedule):
            speed = SpeedSchedule.constant(float(speed))
        return replace(self, generators=self.generators.with_speed(speed))

    def with_solver(self, step: float) -> "Scenario":
        return replace(self, solver=SolverConfig(step))

    def validate(self, times=None) -> None:
        """Eagerly check generator and measure invariants at the grid knots."""
        times = self.grid.knots if times is None else times
        for t in times:
            mu = self.mu(t)
            if np.min(mu) <= 0:
                raise DomainError(f"measure has a zero weight at t={t}")
            Q = check_qmatrix(self.L(t))
            if self.generators.reversible:
                res = detailed_balance_residual(Q, mu)
                if res > 1e-12:
                    raise DomainError(f"detailed-balance residual {res:.3e} at t={t}")

    def describe(self) -> dict:
        return {"name": self.name, "states": list(self.states.labels),
                "measure": {"mu0": self.measures.mu0.tolist(),
                            "hamiltonian": self.measures.hamiltonian.describe()},
                "generator": self.generators.describe(),
                "time": {"t_start": self.grid.t_start, "t_end": self.grid.t_end,
                         "intervals": self.grid.intervals},
                "subset": None if self.subset is None else list(self.subset),
                "solver": {"step": self.solver.step}}


# --------------------------------------------------------------------------
# fixtures and worked examples
# --------------------------------------------------------------------------


def _speed(lam) -> SpeedSchedule:
    return lam if isinstance(lam, SpeedSchedule) else SpeedSchedule.constant(float(lam))


def two_state_scenario(lam=1.0, t_end: float = 1.0, step: float = 1e-3,
                       intervals: int = 10) -> Scenario:
    """``S = {0, 1}``, uniform ``mu_0``, ``Ham_t = t (0, 1)``, Metropolis generator."""
    measures = MeasureFamily(np.array([0.5, 0.5]), LinearSchedule(np.array([0.0, 1.0])))
    gens = MetropolisFamily(measures, EdgeSet([(0, 1)]), _speed(lam))
    return Scenario(measures, gens, TimeGrid(0.0, t_end, intervals), SolverConfig(step),
                    name="two_state")


def homogeneous_scenario(mu, edges: EdgeSet, lam=1.0, t_end: float = 1.0,
                         step: float = 1e-3, intervals: int = 10) -> Scenario:
    """Time-homogeneous Metropolis chain: ``mu_t = mu`` and ``H = 0``."""
    mu = np.asarray(mu, dtype=float)
    measures = MeasureFamily(mu, LinearSchedule(np.zeros(mu.size)))
    gens = MetropolisFamily(measures, edges, _speed(lam))
    return Scenario(measures, gens, TimeGrid(0.0, t_end, intervals), SolverConfig(step),
                    name="homogeneous")


def endpoint_transfer_scenario(n: int, eps: float = 0.5, omega: float = 1.0,
                               t_end: float = 2 * math.pi, step: float = 1e-3, lam=1.0,
                               intervals: int = 15) -> Scenario:
    """Path ``0 - 1 - ... - n`` whose end weights oscillate; interior weights fixed."""
    if int(n) != n or n < 2:
        raise DomainError("endpoint transfer needs integer n >= 2")
    if not 0 < eps < 1:
        raise DomainError("endpoint transfer needs 0 < eps < 1")
    measures = MeasureFamily(np.full(n + 1, 1.0 / (n + 1)),
                             EndpointTransferSchedule(int(n), float(eps), float(omega)))
    gens = MetropolisFamily(measures, EdgeSet.path(n + 1), _speed(lam))
    return Scenario(measures, gens, TimeGrid(0.0, t_end, intervals), SolverConfig(step),
                    name=f"endpoint_transfer_n{n}")


def disconnected_halves_scenario(lam=1.0, t_end: float = 1.0, step: float = 1e-3,
                                 intervals: int = 10) -> Scenario:
    """Two disconnected two-state blocks ``{0,1}`` and ``{2,3}``.

    ``Ham_t = t (0, 1, 2, 2)`` makes mass drain from ``{2, 3}`` into
    ``{0, 1}``, and on ``{0, 1}`` the conditional measures coincide with
    the two-state fixture.
    """
    measures = MeasureFamily(np.full(4, 0.25), LinearSchedule(np.array([0.0, 1.0, 2.0, 2.0])))
    gens = MetropolisFamily(measures, EdgeSet([(0, 1), (2, 3)]), _speed(lam))
    return Scenario(measures, gens, TimeGrid(0.0, t_end, intervals), SolverConfig(step),
                    subset=(0, 1), name="disconnected_halves")


def piecewise_scenario(lam=1.0, t_end: float = 1.0, step: float = 1e-3) -> Scenario:
    """Three states on a triangle with a piecewise-linear Hamiltonian."""
    measures = MeasureFamily(np.array([0.2, 0.3, 0.5]),
                             PiecewiseLinearSchedule([0.0, 0.5, 2.0],
                                                     [[0, 0, 0], [0.4, -0.3, 0.1],
                                                      [1.0, 0.2, -0.5]]))
    gens = MetropolisFamily(measures, EdgeSet.complete(3), _speed(lam))
    return Scenario(measures, gens, TimeGrid(0.0, t_end, 10), SolverConfig(step),
                    name="piecewise_triangle")


# --------------------------------------------------------------------------
# Appendix chain
# --------------------------------------------------------------------------


def _pass(measured, bound):
    tol = 1e-6 * abs(bound) if abs(bound) > 10 else 1e-7
    return bool(measured <= bound + tol)


@dataclass
class BoundCheck:
    name: str
    measured: float
    bound: float
    passed: bool | None
    note: str = ""

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class AppendixReport:
    n: int
    t: float
    relabeled: bool
    H0: float
    Hn: float
    A: float
    B: float
    C: float
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def as_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "checks"}
        d["checks"] = [c.as_dict() for c in self.checks]
        d["ok"] = self.ok
        return d


def c_lower_bound(n: int) -> float:
    return (n - 4) ** 4 / (48.0 * (n + 1) ** 2)


def c_upper_bound(n: int) -> float:
    return n * max((n + 1) / 2.0, 2.0)


def appendix_bounds_report(n: int, t: float, eps: float = 0.5, omega: float = 1.0) -> AppendixReport:
    """Exact ``A_t, B_t, C_t`` of the endpoint chain against the closed-form bounds.

    When mass is leaving state 0 at time ``t`` the endpoints are relabeled
    so that the bounds are stated for a nonnegative ``mu'_t(0)``.
    """
    sc = endpoint_transfer_scenario(n, eps, omega)
    Q, mu, H = sc.L(t), sc.mu(t), sc.H(t)
    C = spectral_gap_constant(Q, mu)
    A = weighted_poincare_A(Q, mu, H)
    B = weighted_poincare_B(Q, mu, H)
    relabeled = H[0] > 0
    h0, hn = (H[n], H[0]) if relabeled else (H[0], H[n])
    checks = [
        BoundCheck("A <= -4 H(0) (n+1)", A, -4.0 * h0 * (n + 1), None),
        BoundCheck("B <= 4 (H(0)^2 + H(n)^2) (n+1)", B, 4.0 * (h0 ** 2 + hn ** 2) * (n + 1), None),
        BoundCheck("C <= n max((n+1)/2, 2)", C, c_upper_bound(n), None),
    ]
    if n >= 4:
        lower = c_lower_bound(n)
        checks.append(BoundCheck("C >= (n-4)^4 / (48 (n+1)^2)", -C, -lower, None))
    else:
        checks.append(BoundCheck("C >= (n-4)^4 / (48 (n+1)^2)", -C, float("nan"), None,
                                 "skipped: lower bound requires n >= 4"))
    if np.max(np.abs(H)) <= 1.0:
        checks.append(BoundCheck("A <= 4 (n+1)", A, 4.0 * (n + 1), None))
        checks.append(BoundCheck("B <= 8 (n+1)", B, 8.0 * (n + 1), None))
    for c in checks:
        if not c.note:
            c.passed = _pass(c.measured, c.bound)
    return AppendixReport(n, float(t), bool(relabeled), float(h0), float(hn), A, B, C, checks)


def variance_lower_bound_witness(n: int, t: float = 0.0, eps: float = 0.5, omega: float = 1.0):
    """Return ``(f, Var(f)/E(f), E(f))`` for ``f = (1, 1, 2, ..., n-1, n-1)``."""
    if n < 4:
        raise DomainError("the witness is defined for n >= 4")
    sc = endpoint_transfer_scenario(n, eps, omega)
    f = np.arange(n + 1, dtype=float)
    f[0], f[n] = 1.0, n - 1.0
    mu = sc.mu(t)
    from .generators import dirichlet_form
    energy = dirichlet_form(sc.L(t), mu, f)
    return f, variance(f, mu) / energy, energy


# --------------------------------------------------------------------------
# nonlocal drift
# --------------------------------------------------------------------------


def nonlocal_drift_generator(n: int, measures: MeasureFamily, t: float) -> np.ndarray:
    """Nearest-neighbour Q-matrix whose forward flow transports ``mu_t`` exactly.

    Each edge ``(y-1, y)`` carries the Metropolis conductance
    ``a = 1/2 min(mu(y-1), mu(y))`` in both directions plus the net flux
    ``J_y = -sum_{x<y} d/dt mu_t(x)``, split onto whichever direction keeps
    rates nonnegative.  For the endpoint chain ``J_y = -mu'_t(0)`` on every
    edge, so interior rate differences are ``-(n+1) mu'_t(0)``.
    """
    if measures.n_states != n + 1:
        raise DomainError("measure family must live on {0, ..., n}")
    mu = measure_at(measures, t)
    dmu = -h_rate_at(measures, t) * mu
    flux = -np.cumsum(dmu)[:-1]
    Q = np.zeros((n + 1, n + 1))
    for y in range(1, n + 1):
        a = 0.5 * min(mu[y - 1], mu[y])
        J = flux[y - 1]
        Q[y - 1, y] = (a + max(J, 0.0)) / mu[y - 1]
        Q[y, y - 1] = (a + max(-J, 0.0)) / mu[y]
    if not np.all(np.isfinite(Q)) or np.any(Q < 0):
        raise InfeasibleDriftError(f"drift at t={t} requires negative or non-finite rates")
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def nonlocal_drift_family(scenario: Scenario) -> CallableFamily:
    n = scenario.n_states - 1
    return CallableFamily(lambda t: nonlocal_drift_generator(n, scenario.measures, t),
                          scenario.n_states, SpeedSchedule.constant(1.0))


# --------------------------------------------------------------------------
# config loading
# --------------------------------------------------------------------------


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


class _Cfg:
    """Path-tracking accessor that turns schema problems into ConfigError."""

    def __init__(self, text: str):
        self.text = text

    def fail(self, path: str, msg: str):
        line = _line_of(self.text, path.split(".")[-1].split("[")[0])
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{path}{where}: {msg}")

    def get(self, obj: dict, key: str, path: str, default: Any = ..., kind=None):
        full = f"{path}.{key}" if path else key
        if not isinstance(obj, dict):
            self.fail(path or "<root>", "expected an object")
        if key not in obj:
            if default is ...:
                self.fail(full, "missing required field")
            return default
        val = obj[key]
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                self.fail(full, f"expected a finite number, got {val!r}")
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                self.fail(full, f"expected an integer, got {val!r}")
            return val
        return val


def _build_speed(cfg: _Cfg, spec, path: str) -> SpeedSchedule:
    form = cfg.get(spec, "form", path, "constant")
    if form == "constant":
        v = cfg.get(spec, "value", path, kind=float)
        if v < 0:
            cfg.fail(f"{path}.value", f"speed must be >= 0, got {v}")
        return SpeedSchedule.constant(v)
    if form == "piecewise_linear":
        knots = cfg.get(spec, "knots", path)
        values = cfg.get(spec, "values", path)
        for k, v in enumerate(values):
            if not isinstance(v, (int, float)) or v < 0:
                cfg.fail(f"{path}.values[{k}]", f"speed must be >= 0, got {v!r}")
        try:
            return SpeedSchedule(np.array(knots, float), np.array(values, float))
        except FkpropError as exc:
            cfg.fail(path, str(exc))
    cfg.fail(f"{path}.form", f"unknown speed form {form!r}")


def _build_hamiltonian(cfg: _Cfg, spec, path: str, n: int):
    form = cfg.get(spec, "form", path)
    try:
        if form == "linear":
            base = np.array(cfg.get(spec, "base", path), dtype=float)
            if base.shape != (n,):
                cfg.fail(f"{path}.base", f"expected {n} values")
            return LinearSchedule(base)
        if form == "piecewise_linear":
            return PiecewiseLinearSchedule(np.array(cfg.get(spec, "knots", path), float),
                                           np.array(cfg.get(spec, "values", path), float))
        if form == "endpoint_transfer":
            sched = EndpointTransferSchedule(cfg.get(spec, "n", path, kind=int),
                                             cfg.get(spec, "eps", path, kind=float),
                                             cfg.get(spec, "omega", path, 1.0, kind=float))
            if sched.n_states != n:
                cfg.fail(f"{path}.n", f"endpoint_transfer n={sched.n} needs {sched.n + 1} states, "
                                      f"state space has {n}")
            return sched
    except (FkpropError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        cfg.fail(path, str(exc))
    cfg.fail(f"{path}.form", f"unknown hamiltonian form {form!r}")


def load_scenario(text: str, overrides: dict | None = None) -> Scenario:
    """Build and validate a :class:`Scenario` from JSON text.

    ``overrides`` may replace ``lambda`` (a number) and ``step``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    cfg = _Cfg(text)
    if not isinstance(doc, dict):
        cfg.fail("<root>", "expected a JSON object")
    overrides = overrides or {}

    states = cfg.get(doc, "states", "")
    if isinstance(states, int) and not isinstance(states, bool):
        space = StateSpace.range(states) if states >= 2 else cfg.fail("states", "need >= 2 states")
    elif isinstance(states, list):
        try:
            space = StateSpace(tuple(states))
        except DomainError as exc:
            cfg.fail("states", str(exc))
    else:
        cfg.fail("states", "expected an integer count or a list of labels")
    n = space.size

    mspec = cfg.get(doc, "measure", "")
    mu0 = cfg.get(mspec, "mu0", "measure", "uniform")
    if mu0 == "uniform":
        mu0 = np.full(n, 1.0 / n)
    else:
        mu0 = np.asarray(mu0, dtype=float)
        if mu0.shape != (n,) or np.any(~np.isfinite(mu0)) or np.any(mu0 <= 0):
            cfg.fail("measure.mu0", f"expected {n} positive weights")
        total = mu0.sum()
        if abs(total - 1.0) > 1e-6:
            log.warning("measure.mu0 sums to %.12g; normalising", total)
        mu0 = mu0 / total
    ham = _build_hamiltonian(cfg, cfg.get(mspec, "hamiltonian", "measure"), "measure.hamiltonian", n)
    measures = MeasureFamily(mu0, ham)

    speed = _build_speed(cfg, cfg.get(doc, "lambda", "", {"form": "constant", "value": 1.0}),
                         "lambda")
    if "lambda" in overrides and overrides["lambda"] is not None:
        if overrides["lambda"] < 0:
            raise ConfigError(f"lambda override must be >= 0, got {overrides['lambda']}")
        speed = SpeedSchedule.constant(float(overrides["lambda"]))

    gspec = cfg.get(doc, "generator", "", {"builder": "metropolis", "edges": "path"})
    builder = cfg.get(gspec, "builder", "generator")
    if builder == "metropolis":
        edges = cfg.get(gspec, "edges", "generator", "path")
        try:
            if edges == "path":
                edge_set = EdgeSet.path(n)
            elif edges == "complete":
                edge_set = EdgeSet.complete(n)
            else:
                edge_set = EdgeSet([space.index(a), space.index(b)] for a, b in edges)
                edge_set.adjacency(n)
        except (FkpropError, ValueError, TypeError) as exc:
            cfg.fail("generator.edges", str(exc))
        gens = MetropolisFamily(measures, edge_set, speed)
    elif builder == "tabulated":
        try:
            gens = TabulatedFamily(np.array(cfg.get(gspec, "knots", "generator"), float),
                                   np.array(cfg.get(gspec, "matrices", "generator"), float), speed)
        except (FkpropError, ValueError) as exc:
            cfg.fail("generator.matrices", str(exc))
        if gens.n_states != n:
            cfg.fail("generator.matrices", f"matrices must be {n}x{n}")
    else:
        cfg.fail("generator.builder", f"unknown builder {builder!r}")

    tspec = cfg.get(doc, "time", "", {})
    t_start = cfg.get(tspec, "t_start", "time", 0.0, kind=float)
    t_end = cfg.get(tspec, "t_end", "time", 1.0, kind=float)
    intervals = cfg.get(tspec, "intervals", "time", 10, kind=int)
    try:
        grid = TimeGrid(t_start, t_end, intervals)
    except DomainError as exc:
        cfg.fail("time", str(exc))
    if t_start < 0:
        cfg.fail("time.t_start", "times must be >= 0")

    step = cfg.get(cfg.get(doc, "solver", "", {}), "step", "solver", 1e-3, kind=float)
    if overrides.get("step") is not None:
        step = float(overrides["step"])
    try:
        solver = SolverConfig(step)
    except ConfigError as exc:
        cfg.fail("solver.step", str(exc))

    subset = cfg.get(doc, "subset", "", None)
    if subset is not None:
        try:
            subset = tuple(space.index(s) for s in subset)
        except DomainError as exc:
            cfg.fail("subset", str(exc))

    sc = Scenario(measures, gens, grid, solver, subset, space, cfg.get(doc, "name", "", ""))
    try:
        sc.validate()
    except DomainError as exc:
        raise ConfigError(f"invariant check failed: {exc}") from None
    return sc


def scenario_config(scenario: Scenario) -> str:
    """Inverse of :func:`load_scenario` for the built-in schedule and builder forms."""
    d = scenario.describe()
    gen = dict(d["generator"])
    lam = gen.pop("lambda")
    doc = {"name": d["name"], "states": d["states"],
           "measure": d["measure"], "generator": gen, "lambda": lam,
           "time": d["time"], "solver": d["solver"]}
    if d["subset"] is not None:
        doc["subset"] = [d["states"][i] for i in d["subset"]]
    return json.dumps(doc, indent=2)
