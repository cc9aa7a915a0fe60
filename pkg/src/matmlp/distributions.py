"""Trace-one Gaussian and trace-one multivariate power exponential (mPE).

Both families use a dispersion ``eta * Omega`` with ``tr(Omega) = 1`` and
``eta`` carried as ``log_eta``. Gradients with respect to ``Omega`` are taken
along symmetric directions ``(E_ab + E_ba) / 2`` and returned as ``d x d``
matrices (for scalar functions) or ``d x d^2`` Jacobians in vec order (for
the samplers).

The sampler derivatives go through the Cholesky factor: for ``S = Phi Phi^T``,
``dPhi = Phi low(Phi^-1 dS Phi^-T)`` where ``low`` keeps the strict lower
triangle and half the diagonal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .errors import NotPositiveDefinite

log = logging.getLogger(__name__)

SAMPLER_MODES = ("gamma", "gauss-approx")
MPE_BOUNDS = (0.5, 1.5)


def _cholesky(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("dispersion matrix is not positive definite") from exc


def _logdet_from_chol(chol):
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def _lower_half(s: np.ndarray) -> np.ndarray:
    """Strict lower triangle plus half the diagonal (works on stacks of matrices)."""
    out = np.tril(s)
    idx = np.arange(s.shape[-1])
    out[..., idx, idx] *= 0.5
    return out


def cholesky_sym_jacobian(chol: np.ndarray, scale: float, vec_right: np.ndarray) -> np.ndarray:
    """``d x d^2`` Jacobian of ``chol(scale * Omega) @ vec_right`` in ``Omega``.

    ``chol`` is the factor of ``scale * Omega``; directions are symmetric.
    """
    d = chol.shape[0]
    p = np.linalg.inv(chol)
    # S[a, b] = scale * P sym(E_ab) P^T
    outer = np.einsum("ia,jb->abij", p, p)
    s = 0.5 * scale * (outer + outer.transpose(1, 0, 2, 3))
    d_chol = chol @ _lower_half(s)  # (a, b, i, j)
    cols = d_chol @ vec_right  # (a, b, i)
    return cols.transpose(2, 1, 0).reshape(d, d * d)  # column a + b d


# trace-one Gaussian -------------------------------------------------------------

@dataclass(frozen=True)
class TraceOneGaussian:
    mu: np.ndarray
    omega: np.ndarray
    log_eta: float

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def eta(self) -> float:
        return float(np.exp(self.log_eta))

    @property
    def cov(self):
        return self.eta * self.omega


def t1g_logpdf(dist: TraceOneGaussian, x) -> float:
    r = np.asarray(x, dtype=float) - dist.mu
    chol = _cholesky(dist.cov)
    sol = np.linalg.solve(chol, r)
    return -0.5 * (dist.dim * np.log(2 * np.pi) + _logdet_from_chol(chol) + float(sol @ sol))


def t1g_sample(dist: TraceOneGaussian, rng: np.random.Generator, eps: np.ndarray | None = None):
    """``x = mu + Phi eps`` with ``Phi Phi^T = eta Omega``; returns ``(x, eps)``."""
    if eps is None:
        eps = rng.standard_normal(dist.dim)
    return dist.mu + _cholesky(dist.cov) @ eps, eps


def t1g_logpdf_grads(dist: TraceOneGaussian, x) -> dict:
    r = np.asarray(x, dtype=float) - dist.mu
    omega_inv = np.linalg.inv(dist.omega)
    w = omega_inv @ r
    t = float(r @ w)
    eta = dist.eta
    return {
        "mu": w / eta,
        "omega": -0.5 * omega_inv + 0.5 * np.outer(w, w) / eta,
        "log_eta": -0.5 * dist.dim + 0.5 * t / eta,
    }


def t1g_sample_grads(dist: TraceOneGaussian, eps: np.ndarray) -> dict:
    """Pathwise Jacobians of the sample ``x`` in every parameter for a fixed ``eps``."""
    chol = _cholesky(dist.cov)
    return {
        "mu": np.eye(dist.dim),
        "omega": cholesky_sym_jacobian(chol, dist.eta, eps),
        "log_eta": 0.5 * chol @ eps,
    }


def kld_t1g_vs_standard_normal(dist: TraceOneGaussian) -> float:
    """``KL(N(mu, eta Omega) || N(0, I))``."""
    k = dist.dim
    chol = _cholesky(dist.omega)
    return 0.5 * (dist.eta * np.trace(dist.omega) + float(dist.mu @ dist.mu) - k
                  - k * dist.log_eta - _logdet_from_chol(chol))


def kld_t1g_grads(dist: TraceOneGaussian) -> dict:
    k = dist.dim
    return {
        "mu": dist.mu.copy(),
        "omega": 0.5 * (dist.eta * np.eye(k) - np.linalg.inv(dist.omega)),
        "log_eta": 0.5 * (dist.eta * np.trace(dist.omega) - k),
    }


# mPE -----------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceOneMpe:
    """mPE with location ``mu``, trace-one ``Omega``, scale ``eta`` and scale/shape ``alpha``, ``beta``."""

    mu: np.ndarray
    omega: np.ndarray
    log_eta: float
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def eta(self):
        return float(np.exp(self.log_eta))

    def as_gaussian(self) -> TraceOneGaussian:
        return TraceOneGaussian(self.mu, self.omega, self.log_eta)


@dataclass(frozen=True)
class MpeSampleAux:
    """Randomness behind one mPE draw.

    ``radial`` is ``varsigma ** (2 beta)``; ``eps`` is the normal draw that
    produced it in gauss-approx mode (``None`` in gamma mode).
    """

    nu: np.ndarray
    varsigma: float
    eps: float | None
    radial: float
    mode: str
    redraws: int = 0


def mpe_log_normalizer(d: int, alpha: float, beta: float) -> float:
    """``log c(alpha, beta)``."""
    k = d / (2.0 * beta)
    return (np.log(beta) + gammaln(d / 2.0) - 0.5 * d * np.log(np.pi) - gammaln(k)
            - k * np.log(2.0) - 0.5 * d * np.log(alpha))


def _quad_form(dist, x):
    r = np.asarray(x, dtype=float) - dist.mu
    omega_inv = np.linalg.inv(dist.omega)
    w = omega_inv @ r
    return r, w, float(r @ w), omega_inv


def mpe_logpdf(dist: TraceOneMpe, x) -> float:
    r = np.asarray(x, dtype=float) - dist.mu
    chol = _cholesky(dist.omega)
    sol = np.linalg.solve(chol, r)
    t = float(sol @ sol)
    d = dist.dim
    logdet = d * dist.log_eta + _logdet_from_chol(chol)
    return mpe_log_normalizer(d, dist.alpha, dist.beta) - 0.5 * logdet - 0.5 * (t / (dist.alpha * dist.eta)) ** dist.beta


def mpe_nu(d: int, beta: float) -> float:
    """Covariance factor ``2^(1/beta) Gamma((d+2)/2beta) / (d Gamma(d/2beta))``."""
    return float(np.exp(np.log(2.0) / beta + gammaln((d + 2) / (2 * beta)) - np.log(d) - gammaln(d / (2 * beta))))


def mpe_moments(dist: TraceOneMpe):
    return dist.mu.copy(), dist.alpha * dist.eta * mpe_nu(dist.dim, dist.beta) * dist.omega


def _radial_gauss(d, beta, rng):
    """Draw ``d/beta + eps sqrt(2d/beta)`` until it is positive."""
    redraws = 0
    while True:
        eps = float(rng.standard_normal())
        u = d / beta + eps * np.sqrt(2.0 * d / beta)
        if u > 0:
            return u, eps, redraws
        redraws += 1


def mpe_sample(dist: TraceOneMpe, rng: np.random.Generator, mode: str = "gauss-approx"):
    """``x = mu + varsigma Phi nu`` with ``Phi Phi^T = alpha eta Omega``; returns ``(x, aux)``."""
    if mode not in SAMPLER_MODES:
        raise ValueError(f"unknown sampler mode {mode!r}")
    d, beta = dist.dim, dist.beta
    g = rng.standard_normal(d)
    nu = g / np.linalg.norm(g)
    if mode == "gamma":
        u = float(rng.gamma(d / (2 * beta), 2.0))
        eps, redraws = None, 0
    else:
        u, eps, redraws = _radial_gauss(d, beta, rng)
        if redraws:
            log.debug("radial draw needed %d redraws", redraws)
    varsigma = u ** (1.0 / (2 * beta))
    aux = MpeSampleAux(nu, varsigma, eps, u, mode, redraws)
    return mpe_apply(dist, aux), aux


def mpe_sample_batch(dist: TraceOneMpe, rng: np.random.Generator, n: int, mode: str = "gauss-approx") -> np.ndarray:
    """``n`` draws as an ``(n, d)`` array; same law as :func:`mpe_sample`, vectorized."""
    if mode not in SAMPLER_MODES:
        raise ValueError(f"unknown sampler mode {mode!r}")
    d, beta = dist.dim, dist.beta
    g = rng.standard_normal((n, d))
    nu = g / np.linalg.norm(g, axis=1, keepdims=True)
    if mode == "gamma":
        u = rng.gamma(d / (2 * beta), 2.0, size=n)
    else:
        u = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            cand = d / beta + rng.standard_normal(todo.size) * np.sqrt(2.0 * d / beta)
            ok = cand > 0
            u[todo[ok]] = cand[ok]
            todo = todo[~ok]
    chol = _cholesky(dist.alpha * dist.eta * dist.omega)
    return dist.mu + (u ** (1.0 / (2 * beta)))[:, None] * (nu @ chol.T)


def mpe_apply(dist: TraceOneMpe, aux: MpeSampleAux) -> np.ndarray:
    """Deterministic part of the sampler for frozen randomness.

    In gauss-approx mode the radial value is recomputed from ``eps`` and the
    current ``beta``, which is what makes the draw differentiable in ``beta``.
    """
    chol = _cholesky(dist.alpha * dist.eta * dist.omega)
    return dist.mu + _varsigma(dist, aux) * (chol @ aux.nu)


def _varsigma(dist, aux):
    if aux.mode == "gamma":
        return aux.varsigma
    d, beta = dist.dim, dist.beta
    u = d / beta + aux.eps * np.sqrt(2.0 * d / beta)
    return u ** (1.0 / (2 * beta))


def mpe_logpdf_grads(dist: TraceOneMpe, x) -> dict:
    r, w, t, omega_inv = _quad_form(dist, x)
    d, a, b, eta = dist.dim, dist.alpha, dist.beta, dist.eta
    s = t / (a * eta)
    power = s ** b
    # d/dt of -(s^b)/2 is -b s^(b-1) / (2 a eta); zero at the centre
    slope = 0.5 * b * s ** (b - 1) / (a * eta) if t > 0 else 0.0
    log_term = power * np.log(s) if t > 0 else 0.0
    return {
        "mu": 2.0 * slope * w,
        "omega": -0.5 * omega_inv + slope * np.outer(w, w),
        "log_eta": -0.5 * d + 0.5 * b * power,
        "alpha": -0.5 * d / a + 0.5 * b * power / a,
        "beta": 1.0 / b + d / (2 * b * b) * (digamma(d / (2 * b)) + np.log(2.0)) - 0.5 * log_term,
    }


def mpe_sample_grads(dist: TraceOneMpe, aux: MpeSampleAux) -> dict:
    """Pathwise Jacobians of the draw for frozen ``aux``.

    The ``beta`` entry is only available in gauss-approx mode (``None``
    otherwise) because only that path is a smooth function of ``beta``.
    """
    d, a, b = dist.dim, dist.alpha, dist.beta
    scale = a * dist.eta
    chol = _cholesky(scale * dist.omega)
    vs = _varsigma(dist, aux)
    direction = chol @ aux.nu
    out = {
        "mu": np.eye(d),
        "omega": vs * cholesky_sym_jacobian(chol, scale, aux.nu),
        "log_eta": 0.5 * vs * direction,
        "alpha": 0.5 * vs * direction / a,
        "beta": None,
    }
    if aux.mode == "gauss-approx":
        u = d / b + aux.eps * np.sqrt(2.0 * d / b)
        du = -d / b ** 2 - 0.5 * aux.eps * np.sqrt(2.0 * d) * b ** -1.5
        dlog_vs = -np.log(u) / (2 * b * b) + du / (2 * b * u)
        out["beta"] = vs * dlog_vs * direction
    return out
