"""Brute-force reference values used to check the exact solvers."""

import math

import numpy as np

from fkprop.norms import mean_zero_basis


def sphere_points(dim: int, count: int) -> np.ndarray:
    """Deterministic, near-uniform points on the unit sphere in R^dim (dim <= 3)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        theta = np.linspace(0.0, math.pi, count, endpoint=False)  # antipodes give equal ratios
        return np.column_stack([np.cos(theta), np.sin(theta)])
    if dim == 3:
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        phi = k * math.pi * (3.0 - math.sqrt(5.0))
        rho = np.sqrt(1.0 - z * z)
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    raise ValueError("sphere grid is only tabulated up to three dimensions")


def _forms(Q, mu, H):
    V = mean_zero_basis(mu)
    K = mu[:, None] * (-Q)
    K = 0.5 * (K + K.T)
    E = V.T @ K @ V
    N = V.T @ ((-H * mu)[:, None] * V)
    v = V.T @ (H * mu)
    return E, N, v


def _zoom(u, dim, width, count):
    """A small grid on the sphere around ``u``."""
    if dim == 1:
        return u[None, :]
    basis = np.linalg.svd(u[None, :])[2][1:]
    side = int(round(count ** (1.0 / (dim - 1))))
    axes = np.meshgrid(*[np.linspace(-width, width, side)] * (dim - 1), indexing="ij")
    offs = np.stack([a.ravel() for a in axes], axis=1) @ basis
    pts = u[None, :] + offs
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def grid_search_constants(Q, mu, H, samples: int = 1_000_000):
    """``(C, A, B)`` as maxima over a dense grid on the mean-zero unit sphere.

    ``samples`` points cover the sphere; a second grid of the same size
    zooms in around each maximiser.
    """
    Q = np.asarray(Q, float)
    mu = np.asarray(mu, float)
    H = np.asarray(H, float)
    E, N, v = _forms(Q, mu, H)
    dim = E.shape[0]
    U = sphere_points(dim, samples)

    def ratios(U):
        e = np.einsum("ij,jk,ik->i", U, E, U)
        return {"C": 1.0 / e, "A": np.einsum("ij,jk,ik->i", U, N, U) / e,
                "B": (U @ v) ** 2 / e}

    coarse = ratios(U)
    spacing = math.sqrt(4 * math.pi / samples) if dim == 3 else math.pi / samples
    out = {}
    for name, vals in coarse.items():
        k = int(np.argmax(vals))
        best = float(vals[k])
        if dim > 1:
            fine = ratios(_zoom(U[k], dim, 4 * spacing, samples))[name]
            best = max(best, float(fine.max()))
        out[name] = best
    return out["C"], out["A"], out["B"]
