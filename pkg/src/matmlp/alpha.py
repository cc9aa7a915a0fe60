"""Dense alpha-derivatives (``d vec F / d (vec X)^T``) and their calculus.

The second half of the module differentiates the matrix logarithm through
the eigendecomposition. Two divisor variants are kept:

``"eigenvalue"`` (default)
    eigenvector derivative ``Xi_kl = M_kl / (lambda_l - lambda_k)`` and
    ``d log(lambda_k) = M_kk / lambda_k``. This is the exact first-order
    perturbation and agrees with finite differences.
``"log"``
    the same construction with ``log(lambda_l) - log(lambda_k)`` as divisor
    and ``d log(lambda_k) = M_kk``. Kept for comparison only; it does not
    match finite differences.

Here ``M = sym(U^T E_ij U)`` is the perturbation expressed in the eigenbasis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrum, DimensionMismatch, NotPositiveDefinite
from .linalg import EIGEN_FLOOR, EigDecomposition, sym_eig

GAP_TOL = 1e-8
DIVISOR_VARIANTS = ("eigenvalue", "log")


@dataclass(frozen=True)
class AlphaJacobian:
    """Derivative of an ``m x p`` matrix function of an ``n x q`` variable.

    ``entries[r, c]`` is the partial of ``(vec F)_r`` with respect to
    ``(vec X)_c``; vec is column-major.
    """

    entries: np.ndarray
    out_shape: tuple[int, int]
    in_shape: tuple[int, int]

    def __post_init__(self):
        m, p = self.out_shape
        n, q = self.in_shape
        if self.entries.shape != (m * p, n * q):
            raise DimensionMismatch(
                f"entries {self.entries.shape} do not fit {self.out_shape} <- {self.in_shape}"
            )

    @classmethod
    def identity(cls, shape: tuple[int, int]) -> "AlphaJacobian":
        n = shape[0] * shape[1]
        return cls(np.eye(n), shape, shape)

    @classmethod
    def constant(cls, out_shape, in_shape) -> "AlphaJacobian":
        return cls(
            np.zeros((out_shape[0] * out_shape[1], in_shape[0] * in_shape[1])),
            tuple(out_shape),
            tuple(in_shape),
        )

    def __matmul__(self, inner: "AlphaJacobian") -> "AlphaJacobian":
        return alpha_chain(self, inner)


def alpha_product(df: AlphaJacobian, dg: AlphaJacobian, f_val, g_val) -> AlphaJacobian:
    """Product rule: ``D(FG) = (G^T kron I_m) DF + (I_r kron F) DG``."""
    f_val = np.atleast_2d(np.asarray(f_val, dtype=float))
    g_val = np.atleast_2d(np.asarray(g_val, dtype=float))
    m, p = f_val.shape
    p2, r = g_val.shape
    if p != p2:
        raise DimensionMismatch(f"cannot multiply {f_val.shape} by {g_val.shape}")
    if df.out_shape != (m, p) or dg.out_shape != (p, r):
        raise DimensionMismatch("Jacobian output shapes do not match the values")
    if df.in_shape != dg.in_shape:
        raise DimensionMismatch("F and G must be differentiated w.r.t. the same variable")
    entries = np.kron(g_val.T, np.eye(m)) @ df.entries + np.kron(np.eye(r), f_val) @ dg.entries
    return AlphaJacobian(entries, (m, r), df.in_shape)


def alpha_chain(outer: AlphaJacobian, inner: AlphaJacobian) -> AlphaJacobian:
    """Chain rule: ``D_X G(F(X)) = D_Y G . D_X F``."""
    if outer.in_shape != inner.out_shape:
        raise DimensionMismatch(
            f"outer expects {outer.in_shape}, inner produces {inner.out_shape}"
        )
    return AlphaJacobian(outer.entries @ inner.entries, outer.out_shape, inner.in_shape)


@dataclass(frozen=True)
class LogEigTensor:
    """Partials of the matrix logarithm: ``slices[i, j] = d log(Y) / d Y_ij``.

    Each slice is the derivative along the symmetric direction
    ``(E_ij + E_ji) / 2``, so ``slices[i, j] == slices[j, i]``.
    """

    slices: np.ndarray  # (d, d, d, d)
    eig: EigDecomposition

    @property
    def dim(self) -> int:
        return self.slices.shape[0]

    def contract(self, direction: np.ndarray) -> np.ndarray:
        """Directional derivative ``sum_ij E_ij * slices[i, j]``."""
        return np.einsum("ij,ijab->ab", direction, self.slices)

    def jacobian(self) -> np.ndarray:
        """The ``d^2 x d^2`` alpha-derivative of ``log Y``."""
        d = self.dim
        # rows index vec(log Y), columns index vec(Y)
        return self.slices.transpose(2, 3, 0, 1).reshape(d * d, d * d, order="F")


def eigenbasis_perturbations(u: np.ndarray) -> np.ndarray:
    """``M[i, j, k, l] = (U_ik U_jl + U_il U_jk) / 2``."""
    outer = np.einsum("ik,jl->ijkl", u, u)
    return 0.5 * (outer + outer.transpose(0, 1, 3, 2))


def eigenvalue_partials(eig: EigDecomposition) -> np.ndarray:
    """``P[i, j, k] = d lambda_k / d Y_ij = U_ik U_jk``."""
    u = eig.vectors
    return np.einsum("ik,jk->ijk", u, u)


def eigenvector_rotation(eig: EigDecomposition, variant: str = "eigenvalue") -> np.ndarray:
    """Antisymmetric ``Xi_ij = U^T dU/dY_ij`` for all ``(i, j)``; shape ``(d, d, d, d)``."""
    lam, u = eig
    if variant == "eigenvalue":
        nodes = lam
    elif variant == "log":
        nodes = np.log(lam)
    else:
        raise ValueError(f"unknown divisor variant {variant!r}")
    gaps = nodes[None, :] - nodes[:, None]  # gaps[k, l] = x_l - x_k
    d = lam.size
    off = ~np.eye(d, dtype=bool)
    inv = np.zeros_like(gaps)
    inv[off] = 1.0 / gaps[off]
    return eigenbasis_perturbations(u) * inv


def dlog_through_eig(y: np.ndarray, variant: str = "eigenvalue", eig: EigDecomposition | None = None) -> LogEigTensor:
    """Derivative of ``log Y`` with respect to every entry of SPD ``Y``.

    Each slice is assembled as ``dU L U^T + U dL U^T + U L dU^T`` with
    ``L = diag(log lambda)``, ``dU = U Xi`` and ``dU^T = -Xi U^T``.

    Raises
    ------
    NotPositiveDefinite
        If an eigenvalue is at or below the eigen floor.
    DegenerateSpectrum
        If two log-eigenvalues are closer than ``GAP_TOL``; callers may jitter
        and retry.
    """
    if eig is None:
        eig = sym_eig(y)
    lam, u = eig
    if lam[-1] <= EIGEN_FLOOR:
        raise NotPositiveDefinite(f"smallest eigenvalue {lam[-1]:.3e} <= {EIGEN_FLOOR}")
    loglam = np.log(lam)
    if lam.size > 1 and np.min(np.abs(np.diff(loglam))) < GAP_TOL:
        raise DegenerateSpectrum("repeated eigenvalues: eigenvector derivative undefined")
    xi = eigenvector_rotation(eig, variant)
    m = eigenbasis_perturbations(u)
    diag_m = np.einsum("ijkk->ijk", m)
    if variant == "eigenvalue":
        dloglam = diag_m / lam
    else:
        dloglam = diag_m
    # U^T (d log Y) U = Xi L - L Xi + dL
    inner = xi * loglam[None, None, None, :] - loglam[None, None, :, None] * xi
    idx = np.arange(lam.size)
    inner[:, :, idx, idx] += dloglam
    slices = u @ inner @ u.T  # U (.) U^T on the trailing pair of axes
    return LogEigTensor(slices, eig)
