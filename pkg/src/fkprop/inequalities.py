"""Optimal Poincare-type constants and a log-Sobolev lower bound.

All constants are suprema over non-constant ``f`` of a ratio against the
Dirichlet form ``E(f) = -<f, Q f>_mu``:

* ``C`` (inverse spectral gap):  Var(f) / E(f)
* ``A``:  int (-H) (f - <f,mu>)^2 dmu / E(f)
* ``B``:  (int H f dmu)^2 / E(f)
* ``C_LS``:  int f^2 log(f^2 / ||f||^2) dmu / E(f)

The first three are solved exactly by dense linear algebra in
coordinates ``g = sqrt(mu) f`` where ``L^2(mu)`` becomes Euclidean and
``-Q`` becomes the symmetric matrix ``M = D^{1/2} (-Q) D^{-1/2}``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import xlogy

from .errors import DetailedBalanceError, InfiniteConstantError
from .generators import DB_TOL, detailed_balance_residual
from .model import variance

GAP_TOL = 1e-10
SYMMETRY_TOL = 1e-8
PIVOT_WARN = 1e-12
ENERGY_FLOOR = 1e-13
COLLAPSE_TOL = 1e-7


def symmetrized_generator(Q, mu) -> np.ndarray:
    """``D^{1/2} (-Q) D^{-1/2}``; symmetric exactly when ``Q`` is reversible for ``mu``."""
    Q = np.asarray(Q, dtype=float)
    r = np.sqrt(np.asarray(mu, dtype=float))
    M = -(r[:, None] * Q / r[None, :])
    asym = float(np.max(np.abs(M - M.T)))
    if asym > SYMMETRY_TOL * max(1.0, np.abs(M).max()):
        raise DetailedBalanceError(f"symmetrized generator is asymmetric by {asym:.3e}")
    return 0.5 * (M + M.T)


def _projected(Q, mu):
    """Orthonormal mean-zero basis ``V`` (Euclidean in g-coordinates) and ``V^T M V``."""
    mu = np.asarray(mu, dtype=float)
    M = symmetrized_generator(Q, mu)
    V = scipy.linalg.null_space(np.sqrt(mu)[None, :])
    E = V.T @ M @ V
    return V, 0.5 * (E + E.T)


def spectral_gap_constant(Q, mu) -> float:
    """Inverse spectral gap ``C``; ``inf`` for reducible chains."""
    M = symmetrized_generator(Q, mu)
    ev = np.linalg.eigvalsh(M)
    if ev[1] <= GAP_TOL:
        return math.inf
    return float(1.0 / ev[1])


def _factor_energy(E: np.ndarray):
    """Cholesky factor of the projected Dirichlet form, or raise for reducible chains."""
    if np.linalg.eigvalsh(E)[0] <= GAP_TOL:
        raise InfiniteConstantError("Dirichlet form is singular on mean-zero functions "
                                    "(reducible chain)")
    c = scipy.linalg.cho_factor(E, lower=True)
    pivot = float(np.min(np.abs(np.diag(c[0])))) ** 2
    if pivot < PIVOT_WARN:
        warnings.warn(f"ill-conditioned Dirichlet form (smallest pivot {pivot:.2e})",
                      RuntimeWarning, stacklevel=3)
    return c


def _check_db(Q, mu):
    res = detailed_balance_residual(Q, mu)
    if res > DB_TOL:
        raise DetailedBalanceError(f"detailed-balance residual {res:.3e} exceeds {DB_TOL:.0e}")


def weighted_poincare_A(Q, mu, H, return_maximizer: bool = False):
    """Largest eigenvalue of the pencil (int(-H) f^2 dmu, E) on mean-zero ``f``.

    The result may be negative; it is the exact supremum either way.
    """
    mu = np.asarray(mu, dtype=float)
    H = np.asarray(H, dtype=float)
    _check_db(Q, mu)
    V, E = _projected(Q, mu)
    _factor_energy(E)
    N = V.T @ (-H[:, None] * V)
    vals, vecs = scipy.linalg.eigh(0.5 * (N + N.T), E)
    A = float(vals[-1])
    if return_maximizer:
        return A, (V @ vecs[:, -1]) / np.sqrt(mu)
    return A


def weighted_poincare_B(Q, mu, H, return_maximizer: bool = False):
    """``sup (int H f dmu)^2 / E(f)``, solved by one linear system ``E g = v``."""
    mu = np.asarray(mu, dtype=float)
    H = np.asarray(H, dtype=float)
    _check_db(Q, mu)
    V, E = _projected(Q, mu)
    c = _factor_energy(E)
    v = V.T @ (H * np.sqrt(mu))
    g = scipy.linalg.cho_solve(c, v)
    B = float(max(v @ g, 0.0))
    if return_maximizer:
        return B, (V @ g) / np.sqrt(mu)
    return B


def ab_comparison_bounds(C: float, mu, H) -> tuple[float, float]:
    """Upper bounds ``(C max H^-, C Var(H))`` on ``A`` and ``B``."""
    H = np.asarray(H, dtype=float)
    return float(C * max(float(np.max(np.maximum(-H, 0.0))), 0.0)), float(C * variance(H, mu))


# --------------------------------------------------------------------------
# log-Sobolev
# --------------------------------------------------------------------------


@dataclass
class LSIResult:
    value: float
    optimizer_ratio: float
    floor: float
    maximizer: np.ndarray
    iterations: int
    seeds: int
    best_seed: int
    floor_binding: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"value": self.value, "optimizer_ratio": self.optimizer_ratio,
                "floor": self.floor, "iterations": self.iterations, "seeds": self.seeds,
                "best_seed": self.best_seed, "floor_binding": self.floor_binding}


@dataclass(frozen=True)
class LSIOptions:
    max_iter: int = 10_000
    rel_tol: float = 1e-10
    n_random: int = 16
    seed: int = 12345
    initial_step: float = 0.5


def _entropy(g: np.ndarray, mu: np.ndarray) -> float:
    g2 = g * g
    return float(np.sum(xlogy(g2, g2 / (mu * g2.sum()))))


def _energy(g, r, W):
    """Dirichlet form from edge differences; stays accurate near constants."""
    f = g / r
    d = f[None, :] - f[:, None]
    return float(0.5 * np.sum(W * d * d))


def _ratio(g, r, mu, W):
    e = _energy(g, r, W)
    if e <= ENERGY_FLOOR * float(g @ g):
        return 0.0
    return _entropy(g, mu) / e


def _ascend(g, r, mu, M, W, opts: LSIOptions):
    g = g / np.linalg.norm(g)
    R = _ratio(g, r, mu, W)
    eta = opts.initial_step
    it = 0
    while it < opts.max_iter and eta > 1e-16:
        it += 1
        if abs(g @ r) > 1.0 - COLLAPSE_TOL:
            # collapsing onto the constant direction, whose limit is the 2C floor
            break
        g2 = g * g
        e = _energy(g, r, W)
        if e <= ENERGY_FLOOR:
            break
        grad_ent = 2.0 * g * np.log(np.where(g2 > 0, g2 / (mu * g2.sum()), 1.0))
        grad = (grad_ent - R * 2.0 * (M @ g)) / e
        grad -= (grad @ g) * g
        gn = np.linalg.norm(grad)
        if gn == 0.0:
            break
        cand = g + eta * grad / gn
        cand /= np.linalg.norm(cand)
        Rc = _ratio(cand, r, mu, W)
        if Rc > R:
            improvement = (Rc - R) / max(abs(R), 1e-300)
            g, R = cand, Rc
            eta = min(eta * 1.5, 1.0)
            if improvement < opts.rel_tol:
                break
        else:
            eta *= 0.5
    return R, g, it


def log_sobolev_constant(Q, mu, opts: LSIOptions | None = None, C: float | None = None) -> LSIResult:
    """Certified lower bound on the log-Sobolev constant.

    Projected gradient ascent of the entropy/energy ratio on the unit
    ``L^2(mu)`` sphere from a deterministic set of starts: every non-ground
    eigenvector of the symmetrized generator, every centred indicator and
    ``opts.n_random`` pseudo-random vectors.  Since ratios of functions
    ``1 + h`` with ``h -> 0`` tend to ``2 Var(h)/E(h)``, ``2 C`` is itself a
    lower bound; ``value`` is the larger of the two and ``floor_binding``
    records which one won.
    """
    opts = opts or LSIOptions()
    mu = np.asarray(mu, dtype=float)
    _check_db(Q, mu)
    C = spectral_gap_constant(Q, mu) if C is None else C
    if math.isinf(C):
        raise InfiniteConstantError("log-Sobolev constant is infinite for a reducible chain")
    M = symmetrized_generator(Q, mu)
    n = mu.size
    r = np.sqrt(mu)
    _, vecs = np.linalg.eigh(M)
    starts = [vecs[:, k] for k in range(1, n)]
    for x in range(n):
        ind = -mu.copy()
        ind[x] += 1.0
        starts.append(r * ind)
    rng = np.random.default_rng(opts.seed)
    starts.extend(rng.standard_normal((opts.n_random, n)))

    Q = np.asarray(Q, dtype=float)
    W = (Q - np.diag(np.diag(Q))) * mu[:, None]
    best = (-1.0, None, 0, -1)
    total = 0
    for k, g0 in enumerate(starts):
        if np.allclose(g0 / np.linalg.norm(g0), r, atol=1e-12):
            continue
        R, g, it = _ascend(g0, r, mu, M, W, opts)
        total += it
        if R > best[0]:
            best = (R, g, it, k)
    ratio, g, _, k = best
    floor = 2.0 * C
    value = max(ratio, floor)
    f = g / r
    return LSIResult(value, ratio, floor, f, total, len(starts), k, floor >= ratio)


# --------------------------------------------------------------------------
# grid reports
# --------------------------------------------------------------------------


@dataclass
class ConstantsReport:
    times: np.ndarray
    C: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C_LS_lower: np.ndarray
    A_bound: np.ndarray
    B_bound: np.ndarray
    methods: dict = field(default_factory=lambda: {
        "C": "dense_symmetric_eigensolver", "A": "projected_generalized_eigenproblem",
        "B": "projected_linear_solve", "C_LS_lower": "multistart_projected_gradient"})
    lsi_diagnostics: list = field(default_factory=list)

    COLUMNS = ("t", "C", "A", "B", "C_LS_lower", "A_bound", "B_bound")

    def at(self, name: str, t: float) -> float:
        """Piecewise-linear interpolation of one constant curve."""
        return float(np.interp(t, self.times, getattr(self, name)))

    def rows(self):
        for k, t in enumerate(self.times):
            yield (float(t), float(self.C[k]), float(self.A[k]), float(self.B[k]),
                   float(self.C_LS_lower[k]), float(self.A_bound[k]), float(self.B_bound[k]))

    def to_csv(self, manifest: str | None = None) -> str:
        lines = [] if manifest is None else [f"# manifest={manifest}"]
        lines.append(",".join(self.COLUMNS))
        for row in self.rows():
            lines.append(",".join(format(v, ".17g") for v in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {"columns": list(self.COLUMNS),
                "rows": [[_json_float(v) for v in row] for row in self.rows()],
                "methods": self.methods,
                "lsi_diagnostics": self.lsi_diagnostics}

    @property
    def any_infinite(self) -> bool:
        return bool(np.any(np.isinf(self.C)))


def _json_float(v):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return v


def constants_at(Q, mu, H, lsi: bool = False, lsi_opts: LSIOptions | None = None) -> dict:
    """All constants for one ``(Q, mu, H)``; infinite constants propagate as ``inf``."""
    C = spectral_gap_constant(Q, mu)
    out = {"C": C, "A": math.inf, "B": math.inf, "C_LS_lower": math.nan}
    if math.isinf(C):
        out["A_bound"] = out["B_bound"] = math.inf
        return out
    out["A"] = weighted_poincare_A(Q, mu, H)
    out["B"] = weighted_poincare_B(Q, mu, H)
    out["A_bound"], out["B_bound"] = ab_comparison_bounds(C, mu, H)
    if lsi:
        res = log_sobolev_constant(Q, mu, lsi_opts, C=C)
        out["C_LS_lower"] = res.value
        out["lsi"] = res.as_dict()
    return out


def compute_constants(scenario, times, lsi: bool = False,
                      lsi_opts: LSIOptions | None = None) -> ConstantsReport:
    """Constants of ``L_t`` against ``mu_t`` and ``H_t`` at every requested time."""
    from .model import h_rate_at, measure_at

    times = np.asarray(times, dtype=float)
    cols = {k: np.empty(times.size) for k in ("C", "A", "B", "C_LS_lower", "A_bound", "B_bound")}
    diag = []
    for k, t in enumerate(times):
        vals = constants_at(scenario.generators.at(t), measure_at(scenario.measures, t),
                            h_rate_at(scenario.measures, t), lsi, lsi_opts)
        for name in cols:
            cols[name][k] = vals[name]
        if "lsi" in vals:
            diag.append({"t": float(t), **vals["lsi"]})
    return ConstantsReport(times, cols["C"], cols["A"], cols["B"], cols["C_LS_lower"],
                           cols["A_bound"], cols["B_bound"], lsi_diagnostics=diag)
