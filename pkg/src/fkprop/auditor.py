"""Numerical audits of the propagator bounds.

Every audit measures a quantity (an operator norm, a moment, a quadrature)
for a set of time pairs and compares it with the corresponding bound.  A
row *passes* when ``measured <= bound + tol``.  Hypotheses are checked on a
time grid; when a hypothesis fails the conclusion is still measured, and
the row is labelled vacuous so it never counts as a failure.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from .errors import DomainError, NotInvariantError, NotPlannableError
from .generators import SpeedSchedule, detailed_balance_residual
from .inequalities import LSIOptions, compute_constants, log_sobolev_constant
from .model import h_rate_at, measure_at
from .norms import (lp_norm, lp_operator_norm, mean_zero_norm, operator_norm_2,
                    operator_norm_pq)
from .propagator import (backward_sweep, negative_part_integral, solve_backward,
                         stable_config)

BASE_TOL = 1e-7
REL_TOL = 1e-6
N_PROBES = 1_000
ROOT_2_4 = 2.0 ** 0.25


def row_tolerance(bound: float, base: float = BASE_TOL) -> float:
    """Absolute slack for one comparison: ``base``, or relative ``1e-6`` above 10."""
    if math.isfinite(bound) and abs(bound) > 10:
        return max(base, REL_TOL * abs(bound))
    return base


@dataclass
class AuditRow:
    theorem: str
    part: str
    s: float
    t: float
    hypothesis: bool
    hypothesis_margin: float
    lambda_required: float
    measured: float
    bound: float
    tol: float
    method: str = ""
    witness: list | None = None

    @property
    def holds(self) -> bool:
        """The conclusion itself, regardless of the hypothesis."""
        return bool(self.measured <= self.bound + self.tol)

    @property
    def vacuous(self) -> bool:
        return not self.hypothesis

    @property
    def passed(self) -> bool:
        return self.holds or self.vacuous

    @property
    def failed(self) -> bool:
        return self.hypothesis and not self.holds

    @property
    def margin(self) -> float:
        return self.bound - self.measured

    def as_dict(self) -> dict:
        d = {k: _num(v) for k, v in self.__dict__.items()}
        d.update(holds=self.holds, passed=self.passed, vacuous=self.vacuous,
                 margin=_num(self.margin))
        return d


CSV_FIELDS = ("theorem", "part", "s", "t", "hypothesis", "hypothesis_margin",
              "lambda_required", "measured", "bound", "tol", "margin", "holds", "passed",
              "vacuous", "method")


@dataclass
class AuditReport:
    theorem: str
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, row: AuditRow) -> None:
        self.rows.append(row)

    def extend(self, other: "AuditReport") -> None:
        self.rows.extend(other.rows)

    def sort(self) -> "AuditReport":
        self.rows.sort(key=lambda r: (r.theorem, r.s, r.t, r.part))
        return self

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.failed]

    @property
    def any_hypothesis_failed(self) -> bool:
        return any(r.vacuous for r in self.rows)

    def summary(self) -> dict:
        return {"theorem": self.theorem, "rows": len(self.rows),
                "failed": len(self.failures),
                "vacuous": sum(r.vacuous for r in self.rows),
                "worst_margin": _num(min((r.margin + r.tol for r in self.rows), default=math.inf))}

    def to_json(self, manifest: str | None = None) -> str:
        doc = {"theorem": self.theorem, "summary": self.summary(),
               "meta": _jsonable(self.meta), "rows": [r.as_dict() for r in self.rows]}
        if manifest:
            doc["manifest"] = manifest
        return json.dumps(doc, indent=2)

    def to_csv(self, manifest: str | None = None) -> str:
        buf = io.StringIO()
        if manifest:
            buf.write(f"# manifest={manifest}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            d = r.as_dict()
            w.writerow([_csv_cell(d[k]) for k in CSV_FIELDS])
        return buf.getvalue()


def _num(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return _num(obj)


def _csv_cell(v):
    return format(v, ".17g") if isinstance(v, float) else v


# --------------------------------------------------------------------------
# shared machinery
# --------------------------------------------------------------------------


def audit_times(t: float, n_s: int = 10) -> np.ndarray:
    """Default audit points ``s`` in ``[0, t]``."""
    return np.linspace(0.0, t, n_s + 1)


def hypothesis_times(scenario, t: float, points: int = 65) -> np.ndarray:
    """Times at which pointwise hypotheses on ``[0, t]`` are verified."""
    knots = scenario.grid.knots
    extra = knots[(knots >= 0) & (knots <= t)]
    return np.unique(np.concatenate([np.linspace(0.0, t, points), extra]))


def quadrature_times(t: float, s_values: np.ndarray, step: float) -> np.ndarray:
    """Uniform grid containing every ``s`` with an even interval count to ``t``.

    Built as ``2 m`` intervals between consecutive audit points so that
    composite Simpson applies on every ``[s, t]``.
    """
    s_values = np.unique(np.append(np.asarray(s_values, dtype=float), t))
    gaps = np.diff(s_values)
    gap = float(gaps.max()) if gaps.size else 0.0
    if gap == 0:
        return np.array([t])
    if not np.allclose(gaps, gap):
        raise DomainError("quadrature needs equispaced audit points")
    m = max(1, int(math.ceil(gap / (2 * step) - 1e-9)))
    return np.linspace(s_values[0], t, 2 * m * gaps.size + 1)


def simpson_tail(values: np.ndarray, times: np.ndarray, k: int) -> np.ndarray:
    """``int_{times[k]}^{times[-1]}`` of ``values`` (axis 0) by composite Simpson."""
    if k >= len(times) - 1:
        return np.zeros(values.shape[1:])
    return simpson(values[k:], x=times[k:], axis=0)


def audit_probes(n: int, count: int = N_PROBES, seed: int = 0) -> np.ndarray:
    """Probe functions as columns: constant, indicators, then random families.

    The random part mixes Gaussian, uniform, heavy-tailed and sparse draws
    so that both diffuse and concentrated functions are represented.
    """
    rng = np.random.default_rng(seed)
    cols = [np.ones((n, 1)), np.eye(n), np.arange(n, dtype=float)[:, None]]
    rest = max(0, count - n - 2)
    q = rest // 4
    cols.append(rng.standard_normal((n, q)))
    cols.append(rng.random((n, q)))
    cols.append(rng.standard_cauchy((n, q)))
    mask = rng.random((n, rest - 3 * q)) < 0.3
    cols.append(np.where(mask, rng.standard_normal((n, rest - 3 * q)), 0.0))
    X = np.concatenate(cols, axis=1)[:, :max(count, n + 2)]
    X[:, np.all(X == 0, axis=0)] = 1.0
    return X


class ConstantsCache:
    """Exact ``C, A, B`` (and optionally the LSI bound) memoised by time."""

    def __init__(self, scenario, lsi_opts: LSIOptions | None = None):
        self.scenario = scenario
        self.lsi_opts = lsi_opts
        self._cache: dict[float, dict] = {}
        self._lsi: dict[float, float] = {}

    def get(self, times) -> dict:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        missing = [t for t in times if float(t) not in self._cache]
        if missing:
            rep = compute_constants(self.scenario, missing)
            for k, t in enumerate(rep.times):
                self._cache[float(t)] = {"C": rep.C[k], "A": rep.A[k], "B": rep.B[k]}
        return {name: np.array([self._cache[float(t)][name] for t in times])
                for name in ("C", "A", "B")}

    def lsi(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        for t in times:
            t = float(t)
            if t not in self._lsi:
                mu = measure_at(self.scenario.measures, t)
                C = self.get([t])["C"][0]
                self._lsi[t] = log_sobolev_constant(self.scenario.generators.at(t), mu,
                                                    self.lsi_opts, C=C).value
        return np.array([self._lsi[float(t)] for t in times])


def _excess(lam: np.ndarray, threshold: np.ndarray, strict: bool = False) -> tuple:
    """Hypothesis flag and its worst margin ``min(lambda - threshold)``."""
    with np.errstate(invalid="ignore"):
        diff = lam - threshold
    diff = np.where(np.isnan(diff), -math.inf, diff)
    margin = float(diff.min()) if diff.size else math.inf
    ok = margin > 0 if strict else margin >= 0
    return bool(ok), margin


def _thresholds(consts: dict, kind: str, p: float = 2.0, t: float = 0.0, alpha: float = 0.0,
                beta: float = 0.0, gamma: float = 0.0, kappa: float = 0.0) -> np.ndarray:
    A, B, C = consts["A"], consts["B"], consts["C"]
    with np.errstate(invalid="ignore"):
        if kind == "mainp":
            return p / 4 * A + p * (p + 3) / 4 * t * B
        if kind == "recurs":
            return p * A / 4
        if kind == "main2_i":
            return A / 2 + alpha * C
        if kind == "main2_ii":
            return p / 4 * A + beta * (p - 1) / 4 * B + alpha * p / 2 * C
        if kind == "mara":
            return p / 4 * A + kappa * p * (p - 1) / 4 * B + gamma / 2 * C
    raise DomainError(f"unknown threshold kind {kind!r}")


def required_lambda(scenario, kind: str, t: float, times=None, cache: ConstantsCache | None = None,
                    **params) -> tuple[np.ndarray, np.ndarray]:
    """``(times, threshold)`` for one of the speed conditions on ``[0, t]``.

    ``kind`` is one of ``mainp``, ``recurs``, ``main2_i``, ``main2_ii``,
    ``mara``; ``params`` are the exponents and rates the condition uses.
    """
    times = hypothesis_times(scenario, t) if times is None else np.asarray(times, dtype=float)
    cache = cache or ConstantsCache(scenario)
    params.setdefault("t", t)
    return times, _thresholds(cache.get(times), kind, **params)


def _check(scenario, kind, t, cache, strict=False, **params):
    times, thr = required_lambda(scenario, kind, t, cache=cache, **params)
    lam = np.asarray(scenario.speed(times), dtype=float)
    ok, margin = _excess(lam, thr, strict)
    return ok, margin, float(np.max(thr))


def _is_power_of_two(p: float) -> bool:
    if p < 2 or p != int(p):
        return False
    k = int(p)
    return k & (k - 1) == 0


def _solver(scenario, t):
    return stable_config(scenario, 0.0, t)


def _sweep(scenario, t, s_values, cfg):
    return {s: m.entries for s, m in backward_sweep(scenario, t, s_values, cfg).items()}


# --------------------------------------------------------------------------
# lambda planning
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlannedSpeed(SpeedSchedule):
    """A speed schedule that remembers which term of the threshold binds."""

    binding: tuple = ()
    threshold: np.ndarray | None = None
    safety: float = 0.01


def plan_lambda_mainp(constants, p: float, t: float, safety: float = 0.01) -> PlannedSpeed:
    """Pointwise threshold speed ``max(0, p A/4) + p(p+3)/4 t B`` with a safety margin.

    ``constants`` is a :class:`~fkprop.inequalities.ConstantsReport` whose
    times cover ``[0, t]``.  The schedule interpolates linearly between its
    times; ``binding`` records per time whether the ``A`` or the ``B`` term
    is larger.
    """
    if p < 2:
        raise DomainError(f"planning needs p >= 2, got {p}")
    times = np.asarray(constants.times, dtype=float)
    if times.size == 0 or times[0] > 0 or times[-1] < t:
        raise DomainError(f"constants cover [{times.min()}, {times.max()}], need [0, {t}]")
    A = np.asarray(constants.A, dtype=float)
    B = np.asarray(constants.B, dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        bad = times[~(np.isfinite(A) & np.isfinite(B))]
        raise NotPlannableError(f"infinite constants at t={bad[0]:g}; no finite speed suffices")
    a_term = np.maximum(0.0, p / 4 * A)
    b_term = p * (p + 3) / 4 * t * B
    thr = a_term + b_term
    binding = tuple("A" if a >= b else "B" for a, b in zip(a_term, b_term))
    values = thr * (1.0 + safety)
    return PlannedSpeed(times, values, binding, thr, safety)


def plan_constant(threshold: np.ndarray, safety: float = 0.01) -> float:
    """Smallest constant speed dominating a threshold curve, with a margin."""
    return float(max(0.0, np.max(threshold)) * (1.0 + safety))


# --------------------------------------------------------------------------
# audits
# --------------------------------------------------------------------------


def audit_thm_mainp(scenario, p: float, t: float, n_s: int = 10, n_probes: int = N_PROBES,
                    seed: int = 0, cache: ConstantsCache | None = None) -> AuditReport:
    """``L^p`` boundedness by ``2^{1/4}`` under the speed condition, plus part (ii)."""
    if p < 2:
        raise DomainError(f"need p >= 2, got {p}")
    cache = cache or ConstantsCache(scenario)
    ok, margin, lam_req = _check(scenario, "mainp", t, cache, p=p)
    cfg = _solver(scenario, t)
    s_values = audit_times(t, n_s)
    qs = _sweep(scenario, t, s_values, cfg)
    mu_t = measure_at(scenario.measures, t)
    F = audit_probes(scenario.n_states, n_probes, seed)
    rep = AuditReport("thm_mainp", meta={"p": p, "t": t, "step": cfg.step,
                                         "lambda": scenario.speed.describe()})
    rhs = (_col_norms(F, mu_t, p) + ROOT_2_4 * _col_norms(F, mu_t, p / 2))
    for s in s_values:
        q = qs[float(s)]
        mu_s = measure_at(scenario.measures, s)
        if p == 2:
            res = operator_norm_2(q, mu_s, mu_t)
        else:
            res = operator_norm_pq(q, mu_s, mu_t, p, p, seed=seed)
        rep.add(AuditRow("thm_mainp", "i", float(s), t, ok, margin, lam_req, res.value,
                         ROOT_2_4, row_tolerance(ROOT_2_4), res.method,
                         None if res.maximizer is None else res.maximizer.tolist()))
        lhs = _col_norms(q @ F, mu_s, p)
        k = int(np.argmax(lhs - rhs))
        rep.add(AuditRow("thm_mainp", "ii", float(s), t, ok, margin, lam_req, float(lhs[k]),
                         float(rhs[k]), row_tolerance(float(rhs[k])), "probes",
                         F[:, k].tolist()))
    return rep.sort()


def _col_norms(X, mu, p):
    X = np.abs(X)
    if p == math.inf:
        return X.max(axis=0)
    return (mu @ X ** p) ** (1.0 / p)


def _moments(X, mu, p):
    return mu @ np.abs(X) ** p


def audit_prop_recurs(scenario, p: float, t: float, n_s: int = 10, n_probes: int = N_PROBES,
                      seed: int = 0, quad_step: float | None = None,
                      cache: ConstantsCache | None = None) -> AuditReport:
    """The integral recursion for ``<|q f|^p, mu_s>`` and the side bound on its weight."""
    if p < 2:
        raise DomainError(f"need p >= 2, got {p}")
    cache = cache or ConstantsCache(scenario)
    ok, margin, lam_req = _check(scenario, "recurs", t, cache, strict=True, p=p)
    ok_star, margin_star, lam_star = _check(scenario, "mainp", t, cache, p=p)
    cfg = _solver(scenario, t)
    s_values = audit_times(t, n_s)
    r_grid = quadrature_times(t, s_values, quad_step or max(t / 200, cfg.step))
    qs = _sweep(scenario, t, r_grid, cfg)
    consts = cache.get(r_grid)
    lam = np.asarray(scenario.speed(r_grid), dtype=float)
    den = 4 * lam - p * consts["A"]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(consts["B"] == 0, 0.0, np.where(den > 0, consts["B"] / den, math.inf))

    F = audit_probes(scenario.n_states, n_probes, seed)
    absF = np.abs(F)
    mu_t = measure_at(scenario.measures, t)
    inner = np.empty((r_grid.size, F.shape[1]))
    for k, r in enumerate(r_grid):
        inner[k] = _moments(qs[float(r)] @ absF, measure_at(scenario.measures, r), p / 2) ** 2
    with np.errstate(invalid="ignore"):
        integrand = np.where(inner == 0, 0.0, w[:, None] * inner)
    rep = AuditReport("prop_recurs", meta={"p": p, "t": t, "step": cfg.step,
                                           "quadrature_points": int(r_grid.size)})
    base = _moments(F, mu_t, p)
    for s in s_values:
        k0 = int(np.argmin(np.abs(r_grid - s)))
        mu_s = measure_at(scenario.measures, s)
        lhs = _moments(qs[float(r_grid[k0])] @ F, mu_s, p)
        rhs = base + p * (p - 1) * simpson_tail(integrand, r_grid, k0)
        j = int(np.nanargmax(lhs - rhs))
        rep.add(AuditRow("prop_recurs", "recurs", float(s), t, ok, margin, lam_req,
                         float(lhs[j]), float(rhs[j]), row_tolerance(float(rhs[j]), 1e-6),
                         "probes_simpson", F[:, j].tolist()))
        roco = float(simpson_tail(p * w, r_grid, k0)) if np.all(np.isfinite(w[k0:])) else math.inf
        rep.add(AuditRow("prop_recurs", "roco", float(s), t, ok_star, margin_star, lam_star,
                         roco, 1.0 / (p + 3), 1e-9, "simpson"))
    return rep.sort()


def audit_thm_main2(scenario, p: float, alpha: float, beta: float, t: float, n_s: int = 10,
                    seed: int = 0, cache: ConstantsCache | None = None) -> AuditReport:
    """Exponential decay of mean-zero functions: exact at ``L^2``, probed at ``p = 2^k``."""
    if alpha < 0 or beta < 0:
        raise DomainError("alpha and beta must be >= 0")
    if not _is_power_of_two(p):
        raise DomainError(f"part (ii) needs p a power of 2, got {p}")
    cache = cache or ConstantsCache(scenario)
    ok1, m1, req1 = _check(scenario, "main2_i", t, cache, alpha=alpha)
    ok2, m2, req2 = _check(scenario, "main2_ii", t, cache, p=p, alpha=alpha, beta=beta)
    cfg = _solver(scenario, t)
    s_values = audit_times(t, n_s)
    qs = _sweep(scenario, t, s_values, cfg)
    mu_t = measure_at(scenario.measures, t)
    with np.errstate(divide="ignore"):
        factor = math.sqrt(2.0 + 1.0 / (alpha * beta)) if alpha * beta > 0 else math.inf
    rep = AuditReport("thm_main2", meta={"p": p, "alpha": alpha, "beta": beta, "t": t,
                                         "step": cfg.step})
    for s in s_values:
        q = qs[float(s)]
        mu_s = measure_at(scenario.measures, s)
        decay = math.exp(-alpha * (t - s))
        res = operator_norm_2(q, mu_s, mu_t, mean_zero=True)
        rep.add(AuditRow("thm_main2", "i", float(s), t, ok1, m1, req1, res.value, decay,
                         row_tolerance(decay), res.method, res.maximizer.tolist()))
        res_p = mean_zero_norm(q, mu_s, mu_t, p, seed=seed)
        bound = decay * factor
        rep.add(AuditRow("thm_main2", "ii", float(s), t, ok2, m2, req2, res_p.value, bound,
                         row_tolerance(bound, 1e-6), res_p.method,
                         None if res_p.maximizer is None else res_p.maximizer.tolist()))
    return rep.sort()


def _decay_weight(gamma: float, tau: float) -> float:
    """``(1 - e^{-gamma tau}) / gamma`` with its limit ``tau`` at ``gamma = 0``."""
    x = gamma * tau
    if x == 0:
        return tau
    return -math.expm1(-x) / gamma


def audit_prop41(scenario, p: float, gamma: float, kappa: float, t: float, n_s: int = 10,
                 n_probes: int = N_PROBES, seed: int = 0, quad_step: float | None = None,
                 cache: ConstantsCache | None = None) -> AuditReport:
    """Second-moment decay with a mean correction, and its ``L^p`` recursion."""
    if gamma < 0 or kappa <= 0:
        raise DomainError("need gamma >= 0 and kappa > 0")
    if p < 2:
        raise DomainError(f"need p >= 2, got {p}")
    cache = cache or ConstantsCache(scenario)
    ok, margin, lam_req = _check(scenario, "mara", t, cache, p=p, gamma=gamma, kappa=kappa)
    cfg = _solver(scenario, t)
    s_values = audit_times(t, n_s)
    r_grid = quadrature_times(t, s_values, quad_step or max(t / 200, cfg.step))
    qs = _sweep(scenario, t, r_grid, cfg)
    F = audit_probes(scenario.n_states, n_probes, seed)
    mu_t = measure_at(scenario.measures, t)
    second = _moments(F, mu_t, 2)
    mean_sq = (mu_t @ F) ** 2
    base_p = _moments(F, mu_t, p)
    inner = np.empty((r_grid.size, F.shape[1]))
    for k, r in enumerate(r_grid):
        inner[k] = (math.exp(gamma * (t - r))
                    * _moments(qs[float(r)] @ F, measure_at(scenario.measures, r), p / 2) ** 2)
    rep = AuditReport("prop41", meta={"p": p, "gamma": gamma, "kappa": kappa, "t": t,
                                      "step": cfg.step})
    for s in s_values:
        k0 = int(np.argmin(np.abs(r_grid - s)))
        q = qs[float(r_grid[k0])]
        mu_s = measure_at(scenario.measures, s)
        tau = t - s
        e = math.exp(-gamma * tau)
        # (1 + 1/(kappa gamma)) (1 - e^{-gamma tau}) without cancellation at gamma -> 0
        coef = (1.0 - e) + _decay_weight(gamma, tau) / kappa
        QF = q @ F
        lhs2 = _moments(QF, mu_s, 2)
        rhs2 = e * second + coef * mean_sq
        j = int(np.argmax(lhs2 - rhs2))
        rep.add(AuditRow("prop41", "second_moment", float(s), t, ok, margin, lam_req,
                         float(lhs2[j]), float(rhs2[j]), row_tolerance(float(rhs2[j]), 1e-6),
                         "probes", F[:, j].tolist()))
        lhsp = _moments(QF, mu_s, p)
        rhsp = e * (base_p + (1.0 / kappa + gamma) * simpson_tail(inner, r_grid, k0))
        j = int(np.argmax(lhsp - rhsp))
        rep.add(AuditRow("prop41", "p_moment", float(s), t, ok, margin, lam_req,
                         float(lhsp[j]), float(rhsp[j]), row_tolerance(float(rhsp[j]), 1e-6),
                         "probes_simpson", F[:, j].tolist()))
    return rep.sort()


def lsi_time_integral(scenario, s: float, t: float, cache: ConstantsCache | None = None,
                      intervals: int = 16, factor: float = 1.0) -> float:
    """``int_s^t lambda_r / (factor C_LS_lower(r)) dr`` by Simpson on ``intervals`` pieces."""
    if t == s:
        return 0.0
    cache = cache or ConstantsCache(scenario)
    times = np.linspace(s, t, intervals + 1)
    c_ls = cache.lsi(times) * factor
    lam = np.asarray(scenario.speed(times), dtype=float)
    return float(simpson(lam / c_ls, x=times))


def audit_lsi(scenario, p: float, q_exp: float, s: float, t: float,
              cache: ConstantsCache | None = None, seed: int = 0) -> AuditReport:
    """``L^p -> L^q`` bound under the log-Sobolev time condition.

    The condition is evaluated twice: with the certified lower bound on the
    log-Sobolev constant and with twice that value.
    """
    if p <= 1:
        raise DomainError(f"need p > 1, got {p}")
    if q_exp < p:
        raise DomainError(f"need q >= p, got p={p}, q={q_exp}")
    if not 0 <= s <= t:
        raise DomainError("need 0 <= s <= t")
    cache = cache or ConstantsCache(scenario)
    cfg = stable_config(scenario, s, t)
    q = solve_backward(scenario, s, t, cfg).entries
    mu_s = measure_at(scenario.measures, s)
    mu_t = measure_at(scenario.measures, t)
    if p == q_exp == 2:
        res = operator_norm_2(q, mu_s, mu_t)
    else:
        res = operator_norm_pq(q, mu_s, mu_t, p, q_exp, seed=seed)
    bound = math.exp(negative_part_integral(scenario, s, t, cfg.step))
    need = 0.25 * math.log((q_exp - 1) / (p - 1))
    rep = AuditReport("thm_lsi", meta={"p": p, "q": q_exp, "s": s, "t": t, "step": cfg.step,
                                       "required_integral": need})
    for label, factor in (("C_LS_lower", 1.0), ("2*C_LS_lower", 2.0)):
        integral = lsi_time_integral(scenario, s, t, cache, factor=factor)
        rep.meta[f"integral[{label}]"] = integral
        ok = integral >= need - 1e-12
        rep.add(AuditRow("thm_lsi", label, float(s), float(t), ok, integral - need, need,
                         res.value, bound, row_tolerance(bound, 1e-6), res.method,
                         None if res.maximizer is None else res.maximizer.tolist()))
    return rep


def lsi_matching_speed(scenario, p: float, q_exp: float, s: float, t: float,
                       cache: ConstantsCache | None = None) -> float:
    """Constant speed for which the log-Sobolev time condition holds with equality."""
    cache = cache or ConstantsCache(scenario)
    unit = lsi_time_integral(scenario.with_speed(1.0), s, t, cache)
    return 0.25 * math.log((q_exp - 1) / (p - 1)) / unit


def audit_rough_bounds(scenario, s: float, t: float, n_probes: int = N_PROBES,
                       seed: int = 0) -> AuditReport:
    """``L^1`` identity for nonnegative ``f`` and the rough ``L^p`` bounds."""
    cfg = stable_config(scenario, s, t)
    q = solve_backward(scenario, s, t, cfg).entries
    mu_s = measure_at(scenario.measures, s)
    mu_t = measure_at(scenario.measures, t)
    integral = negative_part_integral(scenario, s, t, cfg.step)
    rep = AuditReport("rough_bounds", meta={"s": s, "t": t, "step": cfg.step,
                                            "neg_part_integral": integral})
    F = audit_probes(scenario.n_states, n_probes, seed)
    G = np.abs(F)
    defect = np.abs(mu_s @ (q @ G) - mu_t @ G)
    j = int(np.argmax(defect))
    rep.add(AuditRow("rough_bounds", "l1_equality", float(s), float(t), True, math.inf, 0.0,
                     float(defect[j]), 0.0, 1e-8, "probes", G[:, j].tolist()))
    lhs = mu_s @ np.abs(q @ F)
    rhs = mu_t @ np.abs(F)
    j = int(np.argmax(lhs - rhs))
    rep.add(AuditRow("rough_bounds", "l1", float(s), float(t), True, math.inf, 0.0,
                     float(lhs[j]), float(rhs[j]), row_tolerance(float(rhs[j])), "probes",
                     F[:, j].tolist()))
    for p in (1.0, 2.0, 4.0, math.inf):
        weight = 1.0 if p == math.inf else (p - 1.0) / p
        bound = math.exp(weight * integral)
        norm = lp_operator_norm(q, mu_s, mu_t, p)
        method = {1.0: "closed_form", 2.0: "exact_svd", math.inf: "closed_form"}.get(p, "boyd_power")
        rep.add(AuditRow("rough_bounds", f"p={p:g}", float(s), float(t), True, math.inf, 0.0,
                         norm, bound, row_tolerance(bound), method))
    return rep


# --------------------------------------------------------------------------
# invariant subsets
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RestrictedScenario:
    """A scenario conditioned on an invariant subset.

    ``scenario`` lives on the subset and uses the conditional measures;
    ``parent`` is the original scenario.
    """

    parent: object
    subset: tuple
    scenario: object

    def mass(self, t) -> np.ndarray | float:
        """``mu_t(S~)``."""
        mu = measure_at(self.parent.measures, t)
        return mu[..., list(self.subset)].sum(axis=-1)

    def mass_ratio(self, s: float, t: float) -> float:
        return float(self.mass(t) / self.mass(s))

    def h(self, t):
        """``h_t(S~) = -d/dt log mu_t(S~)``, evaluated as ``<H_t, mu~_t>``."""
        H = h_rate_at(self.parent.measures, t)[..., list(self.subset)]
        return np.sum(H * measure_at(self.scenario.measures, t), axis=-1)

    def mu(self, t):
        return self.scenario.mu(t)

    def H(self, t):
        return self.scenario.H(t)


def restrict_subset(scenario, subset: Sequence[int], times=None) -> RestrictedScenario:
    """Condition ``scenario`` on an invariant subset of states.

    Raises :class:`NotInvariantError` naming the first edge that leaves the
    subset, and rejects restrictions whose detailed-balance residual
    exceeds ``1e-12``.
    """
    idx = tuple(sorted(int(i) for i in subset))
    n = scenario.n_states
    if len(idx) < 2 or len(set(idx)) != len(idx) or idx[0] < 0 or idx[-1] >= n:
        raise DomainError(f"subset must hold >= 2 distinct states of 0..{n - 1}, got {subset}")
    outside = [j for j in range(n) if j not in idx]
    times = scenario.grid.knots if times is None else np.asarray(times, dtype=float)
    for t in times:
        L = scenario.L(float(t))
        if outside:
            block = np.abs(L[np.ix_(idx, outside)])
            if block.max() > 1e-14:
                i, j = np.unravel_index(int(np.argmax(block)), block.shape)
                raise NotInvariantError(
                    f"edge ({idx[i]}, {outside[j]}) leaves the subset with rate "
                    f"{block[i, j]:.3e} at t={float(t):g}")
    measures = scenario.measures.restrict(idx)
    gens = scenario.generators.restrict(idx)
    sub = replace(scenario, measures=measures, generators=gens, subset=None, states=None,
                  name=f"{scenario.name}|{list(idx)}")
    for t in times:
        res = detailed_balance_residual(sub.L(float(t)), sub.mu(float(t)))
        if res > 1e-12:
            raise NotInvariantError(f"restricted detailed-balance residual {res:.3e} at t={t:g}")
    return RestrictedScenario(scenario, idx, sub)


def audit_cor_loc(scenario, subset, p: float, alpha: float, beta: float, t: float,
                  n_s: int = 10, seed: int = 0) -> AuditReport:
    """Bounds on an invariant subset with the mass-ratio factor.

    Also reports the restriction identity ``q = (mass ratio) q~`` on the
    subset as its own row.
    """
    rs = restrict_subset(scenario, subset)
    sub = rs.scenario
    idx = list(rs.subset)
    cache = ConstantsCache(sub)
    ok1, m1, r1 = _check(sub, "mainp", t, cache, p=p)
    ok2, m2, r2 = _check(sub, "main2_i", t, cache, alpha=alpha)
    pow2 = _is_power_of_two(p)
    if pow2:
        ok3, m3, r3 = _check(sub, "main2_ii", t, cache, p=p, alpha=alpha, beta=beta)
    cfg = stable_config(scenario, 0.0, t)
    s_values = audit_times(t, n_s)
    qs = _sweep(scenario, t, s_values, cfg)
    qt = _sweep(sub, t, s_values, cfg)
    mu_t = rs.mu(t)
    with np.errstate(divide="ignore"):
        factor = math.sqrt(2.0 + 1.0 / (alpha * beta)) if alpha * beta > 0 else math.inf
    rep = AuditReport("cor_loc", meta={"subset": idx, "p": p, "alpha": alpha, "beta": beta,
                                       "t": t, "step": cfg.step})
    for s in s_values:
        q = qs[float(s)][np.ix_(idx, idx)]
        mu_s = rs.mu(s)
        ratio = rs.mass_ratio(s, t)
        defect = float(np.max(np.abs(q - ratio * qt[float(s)])))
        rep.add(AuditRow("cor_loc", "identity", float(s), t, True, math.inf, 0.0, defect, 0.0,
                         1e-8, "two_solves"))
        res = operator_norm_2(q, mu_s, mu_t) if p == 2 else operator_norm_pq(q, mu_s, mu_t, p, p,
                                                                               seed=seed)
        b = ROOT_2_4 * ratio
        rep.add(AuditRow("cor_loc", "i", float(s), t, ok1, m1, r1, res.value, b,
                         row_tolerance(b), res.method))
        decay = math.exp(-alpha * (t - s))
        res = operator_norm_2(q, mu_s, mu_t, mean_zero=True)
        b = decay * ratio
        rep.add(AuditRow("cor_loc", "ii", float(s), t, ok2, m2, r2, res.value, b,
                         row_tolerance(b), res.method))
        if pow2:
            res = mean_zero_norm(q, mu_s, mu_t, p, seed=seed)
            b = decay * factor * ratio
            rep.add(AuditRow("cor_loc", "iii", float(s), t, ok3, m3, r3, res.value, b,
                             row_tolerance(b, 1e-6), res.method))
    return rep.sort()


AUDITS: dict[str, Callable] = {
    "mainp": audit_thm_mainp,
    "recurs": audit_prop_recurs,
    "main2": audit_thm_main2,
    "prop41": audit_prop41,
    "lsi": audit_lsi,
    "cor_loc": audit_cor_loc,
    "rough": audit_rough_bounds,
}
