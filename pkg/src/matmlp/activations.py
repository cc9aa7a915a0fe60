"""Activation matrix functions and scalar heads.

The matrix activation is the Mercer sigmoid kernel on the columns of ``Z``,
``K_ij = tanh(a z_i + b) . tanh(a z_j + b)``, normalized to unit trace. A
diagonal-only variant keeps just ``K_ii``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TraceUnderflow

TRACE_FLOOR = 1e-12


@dataclass(frozen=True)
class MercerParams:
    slope: float = 1.0
    intercept: float = 0.0


DEFAULT_MERCER = MercerParams()


def _features(z, p: MercerParams):
    return np.tanh(p.slope * np.asarray(z, dtype=float) + p.intercept)


def mercer_kernel(z: np.ndarray, p: MercerParams = DEFAULT_MERCER) -> np.ndarray:
    f = _features(z, p)
    return f.T @ f


def diag_mercer_kernel(z: np.ndarray, p: MercerParams = DEFAULT_MERCER) -> np.ndarray:
    f = _features(z, p)
    return np.diag(np.einsum("ai,ai->i", f, f))


def trace_one_normalize(k: np.ndarray) -> np.ndarray:
    tr = np.trace(k)
    if not tr > TRACE_FLOOR:
        raise TraceUnderflow(f"kernel trace {tr:.3e} is below {TRACE_FLOOR}")
    return k / tr


def mercer_activation(z, p: MercerParams = DEFAULT_MERCER, diagonal: bool = False):
    """``H(Z) = K(Z) / tr K(Z)``."""
    k = diag_mercer_kernel(z, p) if diagonal else mercer_kernel(z, p)
    return trace_one_normalize(k)


def mercer_activation_jacobian(z: np.ndarray, p: MercerParams = DEFAULT_MERCER, diagonal: bool = False) -> np.ndarray:
    """Dense ``d^2 x d^2`` alpha-derivative of ``vec H(Z)`` w.r.t. ``vec Z``.

    Entry ``[(m, n), (a, i)]`` is ``dH_mn / dZ_ai`` where column ``i`` of ``Z``
    is the kernel argument ``z_i``. With ``g = slope * (1 - f^2)``:

        dK_mn/dZ_ai = g_ai (delta_mi f_an + delta_ni f_am)
        dtrK/dZ_ai  = 2 g_ai f_ai
        dH_mn/dZ_ai = (dK_mn/dZ_ai - 2 H_mn g_ai f_ai) / trK
    """
    z = np.asarray(z, dtype=float)
    d = z.shape[0]
    f = _features(z, p)
    g = p.slope * (1.0 - f * f)
    if diagonal:
        k = np.diag(np.einsum("ai,ai->i", f, f))
    else:
        k = f.T @ f
    tr = np.trace(k)
    if not tr > TRACE_FLOOR:
        raise TraceUnderflow(f"kernel trace {tr:.3e} is below {TRACE_FLOOR}")
    h = k / tr
    gf = g * f  # (a, i)
    # J[m, n, a, i], starting from the quotient term
    jac = (-2.0 * h)[:, :, None, None] * gf[None, None, :, :]
    idx = np.arange(d)
    if diagonal:
        # dK_mn/dZ_ai = delta_mn delta_mi 2 g_ai f_ai
        jac[idx, idx, :, idx] += 2.0 * gf.T
    else:
        # dK_mn/dZ_ai = g_ai (delta_mi f_an + delta_ni f_am)
        jac[idx, :, :, idx] += np.einsum("ai,an->ina", g, f)
        jac[:, idx, :, idx] += np.einsum("ai,am->ima", g, f)
    jac /= tr
    return jac.reshape(d * d, d * d, order="F")


# scalar heads -----------------------------------------------------------------

def scalar_tanh(v):
    return np.tanh(v)


def scalar_tanh_grad(v):
    t = np.tanh(v)
    return 1.0 - t * t


def scalar_tanh_jacobian(v) -> np.ndarray:
    return np.diag(scalar_tanh_grad(np.ravel(v)))


def linear(v):
    return np.asarray(v, dtype=float)


def linear_grad(v):
    return np.ones_like(np.asarray(v, dtype=float))


def _sigmoid(v):
    v = np.asarray(v, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid_bounded(v, lo: float = 0.5):
    """``lo + sigmoid(v)``, taking values in ``(lo, lo + 1)``."""
    return lo + _sigmoid(v)


def sigmoid_bounded_grad(v, lo: float = 0.5):
    s = _sigmoid(v)
    return s * (1.0 - s)


HEADS = {
    "linear": (linear, linear_grad),
    "tanh": (scalar_tanh, scalar_tanh_grad),
    "sigmoid_bounded": (sigmoid_bounded, sigmoid_bounded_grad),
}


def apply_heads(z: np.ndarray, heads: tuple[str, ...] | str):
    """Apply per-component heads. ``heads`` is one name or one name per entry.

    Returns ``(values, elementwise derivative)``.
    """
    z = np.asarray(z, dtype=float)
    if isinstance(heads, str):
        fn, dfn = HEADS[heads]
        return fn(z), dfn(z)
    out = np.empty_like(z)
    grad = np.empty_like(z)
    for name in dict.fromkeys(heads):
        mask = np.array([h == name for h in heads])
        fn, dfn = HEADS[name]
        out[mask] = fn(z[mask])
        grad[mask] = dfn(z[mask])
    return out, grad
