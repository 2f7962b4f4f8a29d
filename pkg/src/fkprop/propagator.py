"""Backward/forward matrix ODEs for Feynman-Kac and Markov propagators.

With ``G_r = lambda_r L_r - diag(H_r)`` the Feynman-Kac propagator solves

    -d/ds q_{s,t} = G_s q_{s,t},   q_{t,t} = I      (backward)
     d/dt q_{s,t} = q_{s,t} G_t,   q_{s,s} = I      (forward)

and the Markov propagator ``p_{s,t}`` is the same with ``H = 0``.  Both are
integrated with fixed-step classical RK4 on the full matrix.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigError, DomainError, SolverAccuracyError
from .model import h_rate_at, integrate, measure_at, simpson_grid

NEGATIVE_TOL = 1e-8
STEP_GUARD = 0.1


@dataclass(frozen=True)
class SolverConfig:
    step: float = 1e-3
    method: str = "rk4"

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ConfigError(f"solver step must be positive, got {self.step}")
        if self.method != "rk4":
            raise ConfigError(f"unsupported solver method {self.method!r}")


@dataclass(frozen=True, eq=False)
class PropagatorMatrix:
    s: float
    t: float
    entries: np.ndarray
    kind: str = "feynman_kac"
    step: float = float("nan")
    min_raw: float = 0.0

    def __post_init__(self):
        if self.s > self.t:
            raise DomainError("propagator needs s <= t")
        if self.kind not in ("feynman_kac", "markov"):
            raise DomainError(f"unknown propagator kind {self.kind!r}")

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def apply(self, f) -> np.ndarray:
        return self.entries @ np.asarray(f, dtype=float)

    def to_csv(self, manifest: str | None = None) -> str:
        buf = io.StringIO()
        meta = f"# s={self.s!r},t={self.t!r},kind={self.kind},step={self.step!r}"
        if manifest:
            meta += f",manifest={manifest}"
        buf.write(meta + "\n")
        for row in self.entries:
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PropagatorMatrix":
        lines = text.splitlines()
        meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split(","))
        rows = [[float(v) for v in line.split(",")] for line in lines[1:] if line.strip()]
        return cls(float(meta["s"]), float(meta["t"]), np.array(rows), meta["kind"],
                   float(meta["step"]))


# --------------------------------------------------------------------------
# evolution operators
# --------------------------------------------------------------------------


def evolution_operator(scenario, with_potential: bool = True) -> Callable[[float], tuple]:
    """Return ``r -> (G_r, scale_r)`` for the scenario.

    ``scale_r`` is ``lambda_r max|L_r(x,x)| + max|H_r|`` and drives the step guard.
    """
    gens = scenario.generators
    measures = scenario.measures

    def op(r):
        lam = gens.speed(r)
        L = gens.at(r)
        G = lam * L
        scale = lam * float(np.max(np.abs(np.diag(L))))
        if with_potential:
            H = h_rate_at(measures, r)
            G = G - np.diag(H)
            scale += float(np.max(np.abs(H)))
        return G, scale

    return op


def schedule_kinks(scenario) -> list[float]:
    """Times where the coefficients may jump or bend: schedule and table knots.

    Integration pieces are cut there so each RK4 step sees smooth data.
    """
    gens = scenario.generators
    while hasattr(gens, "base"):
        gens = gens.base
    sources = [getattr(scenario.measures.hamiltonian, "knots", None),
               scenario.generators.speed.knots, getattr(gens, "knots", None)]
    kinks = set()
    for k in sources:
        if k is not None and np.ndim(k) == 1 and len(k) > 1:
            kinks.update(float(v) for v in k)
    return sorted(kinks)


def _breakpoints(start: float, stop: float, marks: Iterable[float]) -> list[float]:
    lo, hi = min(start, stop), max(start, stop)
    pts = {start, stop}
    pts.update(float(m) for m in marks if lo < m < hi)
    return sorted(pts, reverse=stop < start)


def _rk4_matrix(op, start: float, stop: float, step: float, forward: bool,
                marks: Iterable[float] = ()) -> dict:
    """Integrate from the identity at ``start`` to ``stop``; return snapshots.

    The interval is cut at every mark and each piece is split into equal
    substeps no longer than ``step``.  Coefficients are right-continuous at
    knots, so stages at the upper end of a piece are evaluated just below it.
    """
    n = op(start)[0].shape[0]
    q = np.eye(n)
    out = {float(start): q.copy()}
    if start == stop:
        return out
    cache = {}

    def rhs(r, y):
        if r not in cache:
            G, scale = op(r)
            if step > STEP_GUARD / (1.0 + scale):
                raise ConfigError(
                    f"solver step {step:g} violates the stability guard "
                    f"{STEP_GUARD}/(1 + {scale:.4g}) = {STEP_GUARD / (1 + scale):.3g} at r={r:g}")
            cache[r] = G
        G = cache[r]
        return y @ G if forward else -(G @ y)

    pts = _breakpoints(start, stop, marks)
    for a, b in zip(pts[:-1], pts[1:]):
        k = max(1, int(math.ceil(abs(b - a) / step - 1e-9)))
        h = (b - a) / k
        top = max(a, b)
        below = float(np.nextafter(top, min(a, b)))
        for i in range(k):
            r = a + i * h
            r_mid = r + 0.5 * h
            r_end = b if i == k - 1 else a + (i + 1) * h
            k1 = rhs(below if r == top else r, q)
            k2 = rhs(r_mid, q + 0.5 * h * k1)
            k3 = rhs(r_mid, q + 0.5 * h * k2)
            k4 = rhs(below if r_end == top else r_end, q + h * k3)
            q = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if len(cache) > 8:
                cache = {r: G for r, G in cache.items() if r == r_end}
        out[float(b)] = q.copy()
    return out


def _finalize(raw: np.ndarray, s, t, kind, step) -> PropagatorMatrix:
    lo = float(raw.min())
    if lo < -NEGATIVE_TOL:
        raise SolverAccuracyError(
            f"propagator entry {lo:.3e} below -{NEGATIVE_TOL:g}; reduce the solver step")
    return PropagatorMatrix(float(s), float(t), np.maximum(raw, 0.0), kind, float(step), lo)


def _check_times(s, t):
    if not (0 <= s <= t):
        raise DomainError(f"need 0 <= s <= t, got s={s}, t={t}")


def _cfg(scenario, cfg):
    return cfg if cfg is not None else scenario.solver


def stable_config(scenario, s: float, t: float, cfg: SolverConfig | None = None,
                  samples: int = 257) -> SolverConfig:
    """``cfg`` with its step shrunk, if needed, to half the stability guard on ``[s, t]``.

    The guard scale is scanned on ``samples`` equispaced times; the factor
    one half absorbs variation between scan points.
    """
    cfg = _cfg(scenario, cfg)
    op = evolution_operator(scenario)
    scale = max(op(float(r))[1] for r in np.linspace(s, t, samples))
    limit = 0.5 * STEP_GUARD / (1.0 + scale)
    if cfg.step <= limit:
        return cfg
    return SolverConfig(limit, cfg.method)


def solve_backward(scenario, s: float, t: float, cfg: SolverConfig | None = None) -> PropagatorMatrix:
    _check_times(s, t)
    cfg = _cfg(scenario, cfg)
    snaps = _rk4_matrix(evolution_operator(scenario), t, s, cfg.step, forward=False,
                        marks=schedule_kinks(scenario))
    return _finalize(snaps[float(s)], s, t, "feynman_kac", cfg.step)


def solve_forward(scenario, s: float, t: float, cfg: SolverConfig | None = None) -> PropagatorMatrix:
    _check_times(s, t)
    cfg = _cfg(scenario, cfg)
    snaps = _rk4_matrix(evolution_operator(scenario), s, t, cfg.step, forward=True,
                        marks=schedule_kinks(scenario))
    return _finalize(snaps[float(t)], s, t, "feynman_kac", cfg.step)


def markov_propagator(scenario, s: float, t: float, cfg: SolverConfig | None = None) -> PropagatorMatrix:
    _check_times(s, t)
    cfg = _cfg(scenario, cfg)
    snaps = _rk4_matrix(evolution_operator(scenario, with_potential=False), t, s, cfg.step,
                        forward=False, marks=schedule_kinks(scenario))
    return _finalize(snaps[float(s)], s, t, "markov", cfg.step)


def backward_sweep(scenario, t: float, s_values, cfg: SolverConfig | None = None,
                   markov: bool = False) -> dict:
    """All of ``q_{s,t}`` (or ``p_{s,t}``) for ``s`` in ``s_values`` from one integration."""
    s_values = sorted({float(s) for s in s_values})
    if not s_values:
        return {}
    _check_times(s_values[0], t)
    cfg = _cfg(scenario, cfg)
    op = evolution_operator(scenario, with_potential=not markov)
    snaps = _rk4_matrix(op, t, s_values[0], cfg.step, forward=False,
                        marks=list(s_values) + schedule_kinks(scenario))
    kind = "markov" if markov else "feynman_kac"
    return {s: _finalize(snaps[s], s, t, kind, cfg.step) for s in s_values}


def integrate_forward_markov(rate_fn: Callable[[float], np.ndarray], s: float, t: float,
                             step: float) -> np.ndarray:
    """Forward transition matrix of an arbitrary (possibly non-reversible) generator."""
    def op(r):
        Q = np.asarray(rate_fn(r), dtype=float)
        return Q, float(np.max(np.abs(np.diag(Q))))
    return _rk4_matrix(op, s, t, step, forward=True)[float(t)]


# --------------------------------------------------------------------------
# Proposition-style diagnostics
# --------------------------------------------------------------------------


def negative_part_integral(scenario, s: float, t: float, step: float | None = None) -> float:
    """``int_s^t max_x H_r^-(x) dr`` by composite Simpson on the solver grid."""
    step = scenario.solver.step if step is None else step
    times = simpson_grid(s, t, step)
    neg = np.max(np.maximum(-h_rate_at(scenario.measures, times), 0.0), axis=-1)
    return float(integrate(neg, times))


def default_probes(n: int, count: int = 64, seed: int = 0) -> np.ndarray:
    """Probe functions as columns: constants, indicators and random draws."""
    rng = np.random.default_rng(seed)
    cols = [np.ones(n), np.arange(n, dtype=float)]
    cols.extend(np.eye(n))
    cols.extend(rng.standard_normal((max(0, count - len(cols)), n)))
    return np.column_stack(cols[:max(count, n + 2)])


@dataclass
class Diagnostics:
    s: float
    midpoint: float
    t: float
    chapman_kolmogorov: float
    min_entry_raw: float
    pointwise_margin: float
    invariance_tv: float
    l1_equality_defect: float
    l1_signed_margin: float
    negative_part_integral: float
    rough_margins: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def worst(self) -> float:
        vals = [self.chapman_kolmogorov, max(self.pointwise_margin, 0.0), self.invariance_tv,
                self.l1_equality_defect, max(self.l1_signed_margin, 0.0),
                -min(0.0, self.min_entry_raw)]
        vals.extend(max(v, 0.0) for v in self.rough_margins.values())
        return max(vals)


def propagator_diagnostics(scenario, s: float, t: float, cfg: SolverConfig | None = None,
                           midpoint: float | None = None, probes: np.ndarray | None = None
                           ) -> Diagnostics:
    """Measure the defects of the elementary propagator identities on ``[s, t]``.

    Rough-bound margins are ``measured norm - bound`` and must be <= 0 up
    to solver noise; every other field is a nonnegative defect.
    """
    from .norms import lp_operator_norm  # local import keeps module layering flat

    cfg = _cfg(scenario, cfg)
    _check_times(s, t)
    m = 0.5 * (s + t) if midpoint is None else float(midpoint)
    if not s <= m <= t:
        raise DomainError("midpoint must lie in [s, t]")
    op = evolution_operator(scenario)
    kinks = schedule_kinks(scenario)
    down = _rk4_matrix(op, t, s, cfg.step, forward=False, marks=[m] + kinks)
    q_st = down[float(s)]
    q_mt = down[float(m)]
    q_sm = _rk4_matrix(op, m, s, cfg.step, forward=False, marks=kinks)[float(s)]
    p_st = markov_propagator(scenario, s, t, cfg).entries
    mu_s = measure_at(scenario.measures, s)
    mu_t = measure_at(scenario.measures, t)
    n = mu_s.size
    probes = default_probes(n) if probes is None else probes

    ck = float(np.max(np.abs(q_sm @ q_mt - q_st)))
    integral = negative_part_integral(scenario, s, t, cfg.step)
    pointwise = float(np.max(q_st - math.exp(integral) * p_st))
    tv = float(np.sum(np.abs(mu_s @ q_st - mu_t)))

    nonneg = np.abs(probes)
    lhs = mu_s @ np.abs(q_st @ nonneg)
    rhs = mu_t @ nonneg
    l1_eq = float(np.max(np.abs(lhs - rhs)))
    l1_signed = float(np.max(mu_s @ np.abs(q_st @ probes) - mu_t @ np.abs(probes)))

    q_clamped = np.maximum(q_st, 0.0)
    rough = {}
    for p in (1.0, 2.0, 4.0, math.inf):
        factor = 1.0 if p == math.inf else (p - 1.0) / p
        norm = lp_operator_norm(q_clamped, mu_s, mu_t, p)
        rough[str(p)] = norm - math.exp(factor * integral)
    return Diagnostics(float(s), m, float(t), ck, float(q_st.min()), pointwise, tv, l1_eq,
                       l1_signed, integral, rough)
