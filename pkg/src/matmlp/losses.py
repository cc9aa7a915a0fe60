"""Losses between SPD matrices and their gradients.

Gradients are returned as length ``d^2`` rows in vec order (a ``1 x d^2``
alpha-derivative) taken along symmetric perturbations, which is what the
kernel activation feeds back since its outputs are always symmetric.
"""
from __future__ import annotations

import logging

import numpy as np

from .alpha import dlog_through_eig
from .errors import DegenerateSpectrum, NotPositiveDefinite
from .linalg import EIGEN_FLOOR, mat_log_spd, sym, sym_eig, vec

log = logging.getLogger(__name__)

LOSSES = ("qre", "stein", "quad")


def qre_divergence(x_tilde: np.ndarray, x: np.ndarray) -> float:
    """``tr(X~ log X~ - X~ log X)`` for trace-one SPD arguments."""
    return float(np.trace(x_tilde @ mat_log_spd(x_tilde)) - np.trace(x_tilde @ mat_log_spd(x)))


def qre_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Symmetrized von Neumann divergence.

    Symmetrizing cancels the ``tr(X) - tr(X~)`` terms, so the value
    ``tr((Y^ - Y)(log Y^ - log Y)) / 2`` is also meaningful off the
    trace-one slice.
    """
    diff = np.asarray(y_hat) - np.asarray(y)
    return 0.5 * float(np.sum(diff.T * (mat_log_spd(y_hat) - mat_log_spd(y))))


def qre_loss_grad(y_hat: np.ndarray, y: np.ndarray, variant: str = "eigenvalue") -> np.ndarray:
    """Gradient of :func:`qre_loss` in ``Y^``.

    ``1/2 [vec(log Y^) + sum_ab (Y^ - Y)^T_ab d(log Y^)_ab / dY^_ij - vec(log Y)]``
    """
    tensor = dlog_through_eig(y_hat, variant=variant)
    log_yh = mat_log_spd(y_hat, eig=tensor.eig)
    diff_t = (np.asarray(y_hat) - np.asarray(y)).T
    through_log = np.einsum("ab,ijab->ij", diff_t, tensor.slices)
    g = 0.5 * (log_yh + through_log - mat_log_spd(y))
    return vec(g)


def _logdet_spd(a):
    try:
        c = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Cholesky failed") from exc
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def stein_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Jensen-Bregman LogDet divergence with midpoint ``(Y + Y^)/2``.

    Averaging the two LogDet divergences to the midpoint leaves
    ``log det Ybar - (log det Y + log det Y^) / 2``.
    """
    mid = 0.5 * (np.asarray(y) + np.asarray(y_hat))
    return _logdet_spd(mid) - 0.5 * (_logdet_spd(y) + _logdet_spd(y_hat))


def stein_loss_grad(y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    mid = 0.5 * (np.asarray(y) + np.asarray(y_hat))
    _logdet_spd(y_hat)
    g = 0.5 * np.linalg.inv(mid).T - 0.5 * np.linalg.inv(y_hat).T
    return vec(sym(g))


def quad_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    diff = np.asarray(y_hat) - np.asarray(y)
    return float(np.sum(diff * diff))


def quad_loss_grad(y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    return vec(2.0 * (np.asarray(y_hat) - np.asarray(y)))


LOSS_FUNCTIONS = {"qre": qre_loss, "stein": stein_loss, "quad": quad_loss}
LOSS_GRADIENTS = {"qre": qre_loss_grad, "stein": stein_loss_grad, "quad": quad_loss_grad}


def loss_value(name: str, y_hat, y) -> float:
    return LOSS_FUNCTIONS[name](y_hat, y)


def jitter(y: np.ndarray) -> tuple[np.ndarray, float]:
    """``Y + delta I`` with ``delta = 1e-9 tr(Y) / d``."""
    d = y.shape[0]
    delta = 1e-9 * float(np.trace(y)) / d
    return y + delta * np.eye(d), delta


def loss_grad_with_jitter(name: str, y_hat: np.ndarray, y: np.ndarray):
    """Loss gradient with one jittered retry on degenerate or singular input.

    Returns ``(gradient, jitter_used)``; gradient is ``None`` when the retry
    also fails, and the caller should drop the sample from the step.
    """
    grad_fn = LOSS_GRADIENTS[name]
    if name == "quad":
        return grad_fn(y_hat, y), 0.0
    try:
        return grad_fn(y_hat, y), 0.0
    except (DegenerateSpectrum, NotPositiveDefinite):
        pass
    y_hat_j, delta = jitter(y_hat)
    y_j = y if sym_eig(y).values[-1] > EIGEN_FLOOR else jitter(y)[0]
    try:
        return grad_fn(y_hat_j, y_j), delta
    except (DegenerateSpectrum, NotPositiveDefinite) as exc:
        log.warning("dropping sample from step after jitter %.3e: %s", delta, exc)
        return None, delta
