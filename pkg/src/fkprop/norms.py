"""Weighted L^p norms and L^p(mu_t) -> L^q(mu_s) operator norms.

For a matrix ``Q`` acting as ``(Qf)(x) = sum_y Q(x, y) f(y)`` we measure

    ||Q||_{p->q} = sup_f ||Qf||_{L^q(mu_s)} / ||f||_{L^p(mu_t)}.

The substitution ``g = mu_t^{1/p} f`` turns this into the unweighted
``l^p -> l^q`` norm of ``A = diag(mu_s)^{1/q} Q diag(mu_t)^{-1/p}``; every
routine below works with that matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .errors import DomainError

N_PROBES = 10_000
N_SEEDS = 8
ETA = 1e-12


@dataclass
class OperatorNormResult:
    value: float
    method: str
    iterations: int = 0
    converged: bool = True
    maximizer: np.ndarray | None = None
    probe_bound: float = 0.0
    sensitive: bool = False

    def as_dict(self) -> dict:
        return {"value": self.value, "method": self.method, "iterations": self.iterations,
                "converged": self.converged, "probe_bound": self.probe_bound,
                "sensitive": self.sensitive,
                "maximizer": None if self.maximizer is None else self.maximizer.tolist()}


def lp_norm(f, mu, p: float) -> float:
    if not p >= 1:
        raise DomainError(f"L^p norm needs p >= 1, got {p}")
    f = np.abs(np.asarray(f, dtype=float))
    if p == math.inf:
        return float(f.max())
    return float(np.dot(f ** p, mu) ** (1.0 / p))


def _column_norms(X: np.ndarray, mu: np.ndarray, p: float) -> np.ndarray:
    """``||X[:, k]||_{L^p(mu)}`` for every column of ``X``."""
    X = np.abs(X)
    if p == math.inf:
        return X.max(axis=0)
    return (mu @ X ** p) ** (1.0 / p)


def mean_zero_basis(mu) -> np.ndarray:
    """Columns form an L^2(mu)-orthonormal basis of the mu-mean-zero functions."""
    mu = np.asarray(mu, dtype=float)
    V = null_space(np.sqrt(mu)[None, :])
    return V / np.sqrt(mu)[:, None]


def operator_norm_2(q, mu_s, mu_t, mean_zero: bool = False) -> OperatorNormResult:
    """Exact ``L^2(mu_t) -> L^2(mu_s)`` norm from the largest singular value.

    With ``mean_zero=True`` the supremum runs over ``f`` with ``<f, mu_t> = 0``.
    """
    Q = np.asarray(q, dtype=float)
    mu_s = np.asarray(mu_s, dtype=float)
    mu_t = np.asarray(mu_t, dtype=float)
    A = np.sqrt(mu_s)[:, None] * Q / np.sqrt(mu_t)[None, :]
    if mean_zero:
        B = null_space(np.sqrt(mu_t)[None, :])
        U, sv, Vt = np.linalg.svd(A @ B)
        g = B @ Vt[0]
        method = "exact_svd_mean_zero"
    else:
        U, sv, Vt = np.linalg.svd(A)
        g = Vt[0]
        method = "exact_svd"
    f = g / np.sqrt(mu_t)
    if f.sum() < 0:
        f = -f
    return OperatorNormResult(float(sv[0]), method, maximizer=f)


def _weighted_matrix(Q, mu_s, mu_t, p, r):
    left = np.ones_like(mu_s) if r == math.inf else mu_s ** (1.0 / r)
    right = np.ones_like(mu_t) if p == math.inf else mu_t ** (-1.0 / p)
    return left[:, None] * Q * right[None, :]


def _lnorm(x, p, axis=0):
    return np.max(np.abs(x), axis=axis) if p == math.inf else np.sum(np.abs(x) ** p, axis=axis) ** (1.0 / p)


def _boyd(A: np.ndarray, p: float, r: float, x0: np.ndarray, tol: float, max_iter: int):
    """Nonlinear power iteration for ``||A||_{p->r}`` with ``A >= 0``."""
    x = x0 / _lnorm(x0, p)
    best, best_x, prev = -1.0, x, -1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y = A @ x
        val = float(_lnorm(y, r))
        if val > best:
            best, best_x = val, x
        if prev > 0 and abs(val - prev) <= tol * val:
            converged = True
            break
        prev = val
        z = A.T @ (y ** (r - 1.0))
        if not np.any(z > 0):
            break
        x = z ** (1.0 / (p - 1.0))
        x = x / _lnorm(x, p)
    return best, best_x, it, converged


def _probe_matrix(n: int, count: int, rng: np.random.Generator, signed: bool = False):
    half = count // 2
    X = np.concatenate([rng.random((n, half)), rng.random((n, count - half)) ** 4], axis=1)
    if signed:
        X = X * rng.choice([-1.0, 1.0], size=X.shape)
    return X


def _probe_bound(Q, mu_s, mu_t, p, r, X, polish: int = 4):
    """Best ratio over the probe columns, then a compass search from the top ``polish``.

    The compass search moves one coordinate at a time by a multiplicative
    factor ``exp(+-delta)`` and halves ``delta`` when no move improves; it
    uses ratio evaluations only, so it stays independent of the power
    iteration it is meant to cross-check.
    """
    def ratio(F):
        return _column_norms(Q @ F, mu_s, r) / _column_norms(F, mu_t, p)

    ratios = ratio(X)
    order = np.argsort(ratios)[::-1][:polish]
    best_val, best_x = float(ratios[order[0]]), X[:, order[0]]
    n = X.shape[0]
    steps = np.concatenate([np.eye(n), -np.eye(n)], axis=1)
    for k in order:
        x = np.maximum(X[:, k], 1e-12)
        val = float(ratios[k])
        delta = 0.25
        for _ in range(20_000):
            if delta < 1e-10:
                break
            cand = x[:, None] * np.exp(delta * steps)
            vals = ratio(cand)
            j = int(np.argmax(vals))
            if vals[j] > val:
                x, val = cand[:, j], float(vals[j])
                delta = min(2.0 * delta, 0.25)
            else:
                delta *= 0.5
        if val > best_val:
            best_val, best_x = val, x
    return best_val, best_x


def operator_norm_pq(q, mu_s, mu_t, p: float, q_exp: float, *, n_seeds: int = N_SEEDS,
                     n_probes: int = N_PROBES, eta: float = ETA, tol: float = 1e-10,
                     max_iter: int = 5_000, seed: int = 0) -> OperatorNormResult:
    """``L^p(mu_t) -> L^{q_exp}(mu_s)`` norm of a nonnegative matrix.

    Boyd's nonlinear power iteration from the all-ones vector and
    ``n_seeds`` random positive starts, on the matrix with zero entries
    lifted by ``eta``.  A second run with ``eta / 10`` sets the
    ``sensitive`` flag when the two disagree.  Random nonnegative probes
    give an independent lower bound; the reported value is the larger one.
    """
    if not (1 < p <= q_exp < math.inf):
        raise DomainError(f"need 1 < p <= q < inf, got p={p}, q={q_exp}")
    Q = np.asarray(q, dtype=float)
    if np.any(Q < 0):
        raise DomainError("operator_norm_pq needs an entrywise nonnegative matrix")
    mu_s = np.asarray(mu_s, dtype=float)
    mu_t = np.asarray(mu_t, dtype=float)
    n = Q.shape[1]
    rng = np.random.default_rng(seed)
    starts = [np.ones(n)] + [rng.random(n) + 0.05 for _ in range(n_seeds)]

    def run(lift):
        A = _weighted_matrix(np.where(Q == 0, lift, Q), mu_s, mu_t, p, q_exp)
        best = (-1.0, None, 0, False)
        total = 0
        for x0 in starts:
            val, x, it, conv = _boyd(A, p, q_exp, x0, tol, max_iter)
            total += it
            if val > best[0]:
                best = (val, x, it, conv)
        return best, total

    (val, x, _, conv), total = run(eta)
    (val_small, _, _, _), _ = run(eta / 10)
    sensitive = abs(val - val_small) > 1e-9 * max(1.0, val)

    probe_val, probe_f = 0.0, None
    if n_probes:
        probe_val, probe_f = _probe_bound(Q, mu_s, mu_t, p, q_exp, _probe_matrix(n, n_probes, rng))
    # value on the unlifted matrix at the iteration's maximizer
    f_iter = x / mu_t ** (1.0 / p)
    iter_val = lp_norm(Q @ f_iter, mu_s, q_exp) / lp_norm(f_iter, mu_t, p)
    if iter_val >= probe_val * (1 - 1e-12):
        return OperatorNormResult(iter_val, "boyd_power", total, conv, f_iter, probe_val, sensitive)
    return OperatorNormResult(probe_val, "probe_lower_bound", total, conv, probe_f, probe_val,
                              sensitive)


def closed_form_norm(q, mu_s, mu_t, p: float, q_exp: float) -> float:
    """Exact norm for ``p = 1`` (extreme points are point masses) or ``p = inf``."""
    Q = np.asarray(q, dtype=float)
    mu_s = np.asarray(mu_s, dtype=float)
    mu_t = np.asarray(mu_t, dtype=float)
    if q_exp < p:
        raise DomainError("closed forms cover q >= p only")
    if p == 1:
        # f = delta_y / mu_t(y) has unit L^1(mu_t) norm
        cols = Q / mu_t[None, :]
        return float(np.max(_column_norms(cols, mu_s, q_exp)))
    if p == math.inf:
        if np.any(Q < 0):
            return float(np.max(np.abs(Q).sum(axis=1))) if q_exp == math.inf else \
                lp_norm(np.abs(Q).sum(axis=1), mu_s, q_exp)
        return lp_norm(Q.sum(axis=1), mu_s, q_exp)
    raise DomainError("closed forms exist for p = 1 and p = inf only")


def lp_operator_norm(q, mu_s, mu_t, p: float, **kwargs) -> float:
    """``L^p(mu_t) -> L^p(mu_s)`` norm, choosing the exact method where one exists."""
    if p == 1 or p == math.inf:
        return closed_form_norm(q, mu_s, mu_t, p, p)
    if p == 2:
        return operator_norm_2(q, mu_s, mu_t).value
    kwargs.setdefault("n_probes", 0)
    return operator_norm_pq(q, mu_s, mu_t, p, p, **kwargs).value


def mean_zero_norm(q, mu_s, mu_t, p: float, *, n_probes: int = 2_000, n_iter: int = 200,
                   seed: int = 0) -> OperatorNormResult:
    """Lower bound on ``sup ||Qf||_p / ||f||_p`` over ``f`` with ``<f, mu_t> = 0``.

    Exact (restricted SVD) for ``p = 2``.  Otherwise signed random probes
    projected onto the mean-zero space, refined by a projected power
    iteration started from the best probes and the ``p = 2`` maximizer.
    """
    if p == 2:
        return operator_norm_2(q, mu_s, mu_t, mean_zero=True)
    if not 1 < p < math.inf:
        raise DomainError(f"mean_zero_norm needs 1 < p < inf, got {p}")
    Q = np.asarray(q, dtype=float)
    mu_s = np.asarray(mu_s, dtype=float)
    mu_t = np.asarray(mu_t, dtype=float)
    n = Q.shape[1]
    rng = np.random.default_rng(seed)

    def ratio(F):
        F = F - mu_t @ F
        den = _column_norms(F, mu_t, p)
        return np.where(den > 1e-300, _column_norms(Q @ F, mu_s, p) / np.maximum(den, 1e-300), 0.0)

    X = rng.standard_normal((n, n_probes))
    r = ratio(X)
    order = np.argsort(r)[::-1][:8]
    starts = [X[:, k] for k in order]
    starts.append(operator_norm_2(Q, mu_s, mu_t, mean_zero=True).maximizer)
    best_val, best_f = float(r[order[0]]), X[:, order[0]] - mu_t @ X[:, order[0]]
    p_dual = p / (p - 1.0)
    iterations = 0
    for f in starts:
        f = f - mu_t @ f
        for _ in range(n_iter):
            iterations += 1
            g = Q @ f
            w = np.sign(g) * np.abs(g) ** (p - 1.0) * mu_s
            z = (Q.T @ w) / mu_t
            f_new = np.sign(z) * np.abs(z) ** (p_dual - 1.0)
            f_new = f_new - mu_t @ f_new
            if not np.any(f_new):
                break
            val = float(ratio(f_new[:, None])[0])
            if val > best_val:
                best_val, best_f = val, f_new
            if np.allclose(f_new / lp_norm(f_new, mu_t, p), f / lp_norm(f, mu_t, p), atol=1e-12):
                break
            f = f_new
    return OperatorNormResult(best_val, "probe_projected_power", iterations, False, best_f, 0.0)
