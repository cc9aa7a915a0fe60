"""Independent numerical oracles used to check the analytic derivatives.

Nothing in here imports derivative code from the rest of the package: the
finite-difference Jacobian only evaluates the function it is given, and the
Monte-Carlo helpers only see samples.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NonFinite


def fd_step(x: np.ndarray, scale: float = 1e-6) -> np.ndarray:
    return scale * (1.0 + np.abs(x))


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h=None) -> np.ndarray:
    """Central-difference alpha-derivative of ``f`` at ``x``.

    Column ``c`` is ``(vec f(X + h_c E_c) - vec f(X - h_c E_c)) / 2 h_c`` with
    ``E_c`` the ``c``-th unit matrix in vec (column-major) order. ``h`` is a
    scalar or an array shaped like ``x``; by default ``1e-6 (1 + |x|)``.
    """
    x = np.array(x, dtype=float)
    shape = x.shape
    flat = x.reshape(-1, order="F")
    if h is None:
        steps = fd_step(flat)
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=float), shape).reshape(-1, order="F")
    cols = []
    for c in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[c] += steps[c]
        xm[c] -= steps[c]
        fp = np.ravel(np.asarray(f(xp.reshape(shape, order="F")), dtype=float), order="F")
        fm = np.ravel(np.asarray(f(xm.reshape(shape, order="F")), dtype=float), order="F")
        col = (fp - fm) / (2.0 * steps[c])
        if not np.all(np.isfinite(col)):
            raise NonFinite(f"non-finite finite difference in column {c}")
        cols.append(col)
    return np.stack(cols, axis=1)


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h=None) -> np.ndarray:
    """Central-difference gradient of a scalar function, shaped like ``x``."""
    x = np.asarray(x, dtype=float)
    return fd_jacobian(f, x, h).reshape(x.shape, order="F")


def fd_sym_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h=None) -> np.ndarray:
    """Gradient of ``f`` along symmetric perturbations ``(E_ij + E_ji) / 2``.

    Equals the finite-difference gradient of ``X -> f((X + X^T) / 2)`` at a
    symmetric point.
    """
    return fd_gradient(lambda a: f(0.5 * (a + a.T)), x, h)


def relative_error(analytic, oracle, floor: float = 1e-12) -> float:
    """``||a - o|| / max(||o||, floor)`` in the Frobenius norm."""
    a = np.asarray(analytic, dtype=float)
    o = np.asarray(oracle, dtype=float)
    return float(np.linalg.norm(a - o) / max(np.linalg.norm(o), floor))


def mc_moments(sampler: Callable[[int], np.ndarray], n: int):
    """Sample mean and covariance of ``n`` draws with their standard errors.

    ``sampler(n)`` must return an ``(n, d)`` array. Returns
    ``(mean, cov, mean_se, cov_se)``; the covariance standard error uses the
    fourth-moment estimate ``sqrt(Var[(x_i - m_i)(x_j - m_j)] / n)``.
    """
    x = np.asarray(sampler(n), dtype=float)
    mean = x.mean(axis=0)
    c = x - mean
    cov = c.T @ c / (n - 1)
    mean_se = c.std(axis=0, ddof=1) / np.sqrt(n)
    prods = c[:, :, None] * c[:, None, :]
    cov_se = prods.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, cov, mean_se, cov_se


def energy_statistic(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample energy distance ``2E|X-Y| - E|X-X'| - E|Y-Y'|``."""
    def mean_dist(a, b):
        diff = a[:, None, :] - b[None, :, :]
        return float(np.sqrt(np.sum(diff * diff, axis=-1)).mean())

    return 2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)


def energy_test(x: np.ndarray, y: np.ndarray, rng: np.random.Generator, n_perm: int = 200):
    """Permutation energy test; returns ``(statistic, p_value)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pooled = np.vstack([x, y])
    n = len(x)
    diff = pooled[:, None, :] - pooled[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))

    def stat(idx):
        a, b = idx[:n], idx[n:]
        return (2.0 * dist[np.ix_(a, b)].mean() - dist[np.ix_(a, a)].mean()
                - dist[np.ix_(b, b)].mean())

    base = np.arange(len(pooled))
    observed = stat(base)
    exceed = sum(stat(rng.permutation(base)) >= observed for _ in range(n_perm))
    return observed, (exceed + 1) / (n_perm + 1)
