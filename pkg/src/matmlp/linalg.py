"""Small dense linear algebra for symmetric matrices.

Everything here works on plain ``numpy`` arrays. The symmetric eigensolver is
a cyclic Jacobi iteration compiled with numba; the matrix functions and the
vec/Kronecker operator set are built on top of it.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import DimensionMismatch, NoConvergence, NonFinite, NotPositiveDefinite

MAX_SWEEPS = 100
SWEEP_TOL = 1e-12
EIGEN_FLOOR = 1e-12


class EigDecomposition(NamedTuple):
    """Eigenpairs of a symmetric matrix, eigenvalues sorted descending."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetric part ``(A + A^T) / 2``."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


@njit(cache=True)
def _cyclic_jacobi(a, max_sweeps, rel_tol):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += a[i, j] * a[i, j]
    target = rel_tol * math.sqrt(fro)
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if math.sqrt(off) <= target:
            return a, v, sweep, True
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return a, v, max_sweeps, False


def _check_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")
    return a


def sym_eig(a: np.ndarray, max_sweeps: int = MAX_SWEEPS) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Only the symmetric part of ``a`` is used. Eigenvalues come back sorted in
    descending order and each eigenvector is signed so that its first
    nonzero component is positive, which makes downstream gradients
    reproducible.

    Raises
    ------
    NonFinite
        If ``a`` has NaN or infinite entries.
    NoConvergence
        If the off-diagonal norm is still above ``1e-12 * ||A||_F`` after
        ``max_sweeps`` sweeps.
    """
    a = _check_square(a)
    if not np.all(np.isfinite(a)):
        raise NonFinite("sym_eig: matrix has non-finite entries")
    diag, vecs, _, converged = _cyclic_jacobi(sym(a), max_sweeps, SWEEP_TOL)
    if not converged:
        raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    values = np.diag(diag).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vecs = vecs[:, order]
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-14)
        if nz.size and col[nz[0]] < 0:
            vecs[:, k] = -col
    return EigDecomposition(values, vecs)


def mat_log_spd(a: np.ndarray, eig: EigDecomposition | None = None) -> np.ndarray:
    """Matrix logarithm of an SPD matrix through its eigendecomposition.

    Eigenvalues at or below ``EIGEN_FLOOR`` raise ``NotPositiveDefinite``;
    nothing is clamped here.
    """
    if eig is None:
        eig = sym_eig(a)
    lam, u = eig
    if lam[-1] <= EIGEN_FLOOR:
        raise NotPositiveDefinite(f"smallest eigenvalue {lam[-1]:.3e} <= {EIGEN_FLOOR}")
    return sym((u * np.log(lam)) @ u.T)


def mat_exp_sym(a: np.ndarray) -> np.ndarray:
    lam, u = sym_eig(a)
    with np.errstate(over="ignore"):
        e = np.exp(lam)
    if not np.all(np.isfinite(e)):
        raise NonFinite("mat_exp_sym: exponential overflow")
    return sym((u * e) @ u.T)


def vec(a: np.ndarray) -> np.ndarray:
    """Column-by-column stacking."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray, m: int, n: int) -> np.ndarray:
    """Inverse of :func:`vec`; rearranges a length ``m*n`` vector to ``m x n``."""
    v = np.asarray(v)
    if v.size != m * n:
        raise DimensionMismatch(f"cannot rearrange {v.size} entries into {m}x{n}")
    return v.reshape((m, n), order="F")


def commutation_permutation(m: int, n: int) -> np.ndarray:
    """Index array ``p`` with ``vec(A.T) == vec(A)[p]`` for ``A`` of shape ``(m, n)``."""
    return np.arange(m * n).reshape((m, n), order="F").reshape(-1, order="C")


def commutation_matrix(m: int, n: int) -> np.ndarray:
    """The ``mn x mn`` permutation matrix ``K`` with ``K vec(A) = vec(A^T)``."""
    perm = commutation_permutation(m, n)
    k = np.zeros((m * n, m * n))
    k[np.arange(m * n), perm] = 1.0
    return k


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def is_spd(a: np.ndarray, floor: float = 0.0) -> bool:
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, a.T, atol=1e-12, rtol=0):
        return False
    return sym_eig(a).values[-1] > floor


def random_spd(d: int, rng: np.random.Generator, cond: float = 10.0) -> np.ndarray:
    """Random SPD matrix with log-uniform spectrum in ``[1, cond]``."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(0.0, math.log(cond), size=d))
    return sym((q * lam) @ q.T)


def random_trace_one(d: int, rng: np.random.Generator, cond: float = 10.0) -> np.ndarray:
    a = random_spd(d, rng, cond)
    return a / np.trace(a)
