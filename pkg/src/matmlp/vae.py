"""Variational autoencoders whose networks are general-form mMLPs.

Each network maps its input to a vector head ``(mu, log_eta[, alpha, beta])``
and a trace-one matrix head ``Omega``. The prior on the latent code is
``N(0, I)``. Two estimators of the lower bound are provided:

``closed_kl``
    Monte-Carlo reconstruction term minus the closed-form KL divergence
    (Gaussian recognition only).
``mc``
    fully Monte-Carlo: ``log p(x|s) + log N(s; 0, I) - log q(s|x)``.

All estimator functions take explicit noise (``draw_noise``) so that values
and gradients can be evaluated for frozen randomness.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distributions import (
    TraceOneGaussian,
    TraceOneMpe,
    kld_t1g_grads,
    kld_t1g_vs_standard_normal,
    mpe_apply,
    mpe_logpdf,
    mpe_logpdf_grads,
    mpe_sample,
    mpe_sample_grads,
    t1g_logpdf,
    t1g_logpdf_grads,
    t1g_sample,
    t1g_sample_grads,
)
from .errors import ConfigError, DivergedTraining, MatMlpError
from .linalg import unvec, vec
from .network import GeneralMmlpParams, backward_general, forward_general
from .optim import Adam

log = logging.getLogger(__name__)

FAMILIES = ("gauss", "mpe")
DISPERSIONS = ("diag", "full")
MODEL_TABLE = {
    # name: (generative family, dispersion, recognition family, dispersion)
    "NdNd": ("gauss", "diag", "gauss", "diag"),
    "NdNf": ("gauss", "diag", "gauss", "full"),
    "NfNd": ("gauss", "full", "gauss", "diag"),
    "NfNf": ("gauss", "full", "gauss", "full"),
    "EfNf": ("mpe", "full", "gauss", "full"),
    "EfEf": ("mpe", "full", "mpe", "full"),
}
ESTIMATORS = ("closed_kl", "mc")
METRIC_COLUMNS = ("epoch", "split", "elbo", "kld", "loglik", "wall_ms")
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class VaeModelSpec:
    generative: str
    generative_dispersion: str
    recognition: str
    recognition_dispersion: str
    latent_dim: int
    data_dim: int
    hidden: tuple = (8, 8)
    hidden_vec: tuple = (8, 8)

    def __post_init__(self):
        combo = (self.generative, self.generative_dispersion, self.recognition, self.recognition_dispersion)
        if combo not in MODEL_TABLE.values():
            raise ConfigError(f"{combo} is not one of the six supported model variants")
        if len(self.hidden) != len(self.hidden_vec):
            raise ConfigError("hidden and hidden_vec must have the same length")

    @classmethod
    def from_name(cls, name: str, latent_dim: int, data_dim: int, **kw) -> "VaeModelSpec":
        if name not in MODEL_TABLE:
            raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODEL_TABLE)}")
        return cls(*MODEL_TABLE[name], latent_dim=latent_dim, data_dim=data_dim, **kw)

    @property
    def name(self) -> str:
        for key, combo in MODEL_TABLE.items():
            if combo == (self.generative, self.generative_dispersion, self.recognition, self.recognition_dispersion):
                return key
        raise AssertionError("unreachable")

    @property
    def estimator(self) -> str:
        return "mc" if self.recognition == "mpe" else "closed_kl"


def head_names(family: str, dim: int) -> tuple[str, ...]:
    heads = ("linear",) * (dim + 1)
    if family == "mpe":
        heads += ("sigmoid_bounded", "sigmoid_bounded")
    return heads


@dataclass
class VaeParams:
    spec: VaeModelSpec
    rec: GeneralMmlpParams
    gen: GeneralMmlpParams

    @classmethod
    def init(cls, spec: VaeModelSpec, rng: np.random.Generator) -> "VaeParams":
        def net(family, disp, out_dim, in_dim):
            heads = head_names(family, out_dim)
            return GeneralMmlpParams.init(
                (out_dim, *spec.hidden), (in_dim, 1), rng,
                rdims=(len(heads), *spec.hidden_vec), heads=heads, output_diagonal=(disp == "diag"),
            )
        rec = net(spec.recognition, spec.recognition_dispersion, spec.latent_dim, spec.data_dim)
        gen = net(spec.generative, spec.generative_dispersion, spec.data_dim, spec.latent_dim)
        return cls(spec, rec, gen)

    @property
    def tensors(self) -> dict:
        out = {f"rec.{k}": v for k, v in self.rec.tensors.items()}
        out.update({f"gen.{k}": v for k, v in self.gen.tensors.items()})
        return out

    def with_tensors(self, tensors: dict) -> "VaeParams":
        rec = {k[4:]: v for k, v in tensors.items() if k.startswith("rec.")}
        gen = {k[4:]: v for k, v in tensors.items() if k.startswith("gen.")}
        return VaeParams(self.spec, self.rec.with_tensors(rec), self.gen.with_tensors(gen))


def _dist(trace, family, dim):
    y = trace.y_hat
    if family == "mpe":
        return TraceOneMpe(y[:dim], trace.Y_hat, float(y[dim]), float(y[dim + 1]), float(y[dim + 2]))
    return TraceOneGaussian(y[:dim], trace.Y_hat, float(y[dim]))


def _pack(grads: dict, family: str):
    """Distribution-parameter gradients to ``(d loss / d y_hat, d loss / d vec Y_hat)``."""
    parts = [grads["mu"], [grads["log_eta"]]]
    if family == "mpe":
        parts += [[grads["alpha"]], [grads["beta"]]]
    return np.concatenate([np.ravel(p) for p in parts]), vec(grads["omega"])


def encode(params: VaeParams, x):
    """Recognition distribution ``q(s | x)``; also returns the forward trace."""
    trace = forward_general(params.rec, np.reshape(x, (-1, 1)))
    return _dist(trace, params.spec.recognition, params.spec.latent_dim), trace


def decode(params: VaeParams, s):
    """Generative distribution ``p(x | s)``; also returns the forward trace."""
    trace = forward_general(params.gen, np.reshape(s, (-1, 1)))
    return _dist(trace, params.spec.generative, params.spec.data_dim), trace


def _logpdf(dist, x):
    return mpe_logpdf(dist, x) if isinstance(dist, TraceOneMpe) else t1g_logpdf(dist, x)


def _logpdf_grads(dist, x):
    return mpe_logpdf_grads(dist, x) if isinstance(dist, TraceOneMpe) else t1g_logpdf_grads(dist, x)


def _log_prior(s):
    return -0.5 * (s.size * LOG_2PI + float(s @ s))


# noise --------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussNoise:
    eps: np.ndarray


def draw_noise(params: VaeParams, rng: np.random.Generator, r: int, mode: str = "gauss-approx", x=None):
    """``r`` frozen draws for the recognition sampler.

    For mPE recognition the radial law depends on ``q``, so ``x`` is needed.
    """
    k = params.spec.latent_dim
    if params.spec.recognition == "gauss":
        return [GaussNoise(rng.standard_normal(k)) for _ in range(r)]
    q, _ = encode(params, x)
    return [mpe_sample(q, rng, mode)[1] for _ in range(r)]


def _draw(q, noise):
    if isinstance(noise, GaussNoise):
        return t1g_sample(q, None, noise.eps)[0]
    return mpe_apply(q, noise)


def _sample_grads(q, noise):
    if isinstance(noise, GaussNoise):
        return t1g_sample_grads(q, noise.eps)
    return mpe_sample_grads(q, noise)


# estimators -----------------------------------------------------------------------

def _estimator(params, estimator):
    estimator = estimator or params.spec.estimator
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    return estimator


def elbo_terms(params: VaeParams, x, noise, estimator: str | None = None):
    """``(elbo, kld, loglik)`` for one datum and frozen noise.

    ``kld`` is the closed form for ``closed_kl`` and the Monte-Carlo average
    of ``log q - log p(s)`` for ``mc``; ``loglik`` is the average of
    ``log p(x | s)``.
    """
    estimator = _estimator(params, estimator)
    x = np.ravel(np.asarray(x, dtype=float))
    q, _ = encode(params, x)
    recon = 0.0
    kl_mc = 0.0
    for nz in noise:
        s = _draw(q, nz)
        p, _ = decode(params, s)
        recon += _logpdf(p, x)
        if estimator == "mc":
            kl_mc += _logpdf(q, s) - _log_prior(s)
    r = len(noise)
    recon /= r
    if estimator == "closed_kl":
        if not isinstance(q, TraceOneGaussian):
            raise ConfigError("closed_kl needs a Gaussian recognition model")
        kld = kld_t1g_vs_standard_normal(q)
    else:
        kld = kl_mc / r
    return recon - kld, kld, recon


def elbo_gaussian(params: VaeParams, x, r: int, rng: np.random.Generator):
    """Closed-form-KL estimator with ``r`` fresh draws."""
    return elbo_terms(params, x, draw_noise(params, rng, r, x=x), "closed_kl")


def elbo_mpe(params: VaeParams, x, r: int, rng: np.random.Generator, mode: str = "gauss-approx"):
    """Fully Monte-Carlo estimator; works for either recognition family."""
    return elbo_terms(params, x, draw_noise(params, rng, r, mode=mode, x=x), "mc")


def elbo_grads(params: VaeParams, x, noise, estimator: str | None = None, data_weight: float = 1.0):
    """Gradient of the frozen-noise estimate in every parameter, plus ``(elbo, kld, loglik)``.

    ``data_weight`` scales the reconstruction term (``0`` isolates the
    divergence term).
    """
    estimator = _estimator(params, estimator)
    spec = params.spec
    x = np.ravel(np.asarray(x, dtype=float))
    q, rec_trace = encode(params, x)
    r = len(noise)
    g_q = {"mu": np.zeros(spec.latent_dim), "omega": np.zeros((spec.latent_dim,) * 2), "log_eta": 0.0}
    if spec.recognition == "mpe":
        g_q.update(alpha=0.0, beta=0.0)
    g_gen = None
    recon = 0.0
    kl_mc = 0.0
    for nz in noise:
        s = _draw(q, nz)
        p, gen_trace = decode(params, s)
        recon += _logpdf(p, x)
        dy, dY = _pack(_logpdf_grads(p, x), spec.generative)
        scale = data_weight / r
        gg, g_s = backward_general(params.gen, gen_trace, scale * dy, scale * dY, with_input=True)
        g_gen = gg if g_gen is None else {k: g_gen[k] + gg[k] for k in g_gen}
        if estimator == "mc":
            kl_mc += _logpdf(q, s) - _log_prior(s)
            explicit = _logpdf_grads(q, s)
            # d/ds [log p(s) - log q(s)] = -s + grad_mu log q
            g_s = g_s + (-s + explicit["mu"]) / r
            for key in g_q:
                g_q[key] = g_q[key] - explicit[key] / r
        jac = _sample_grads(q, nz)
        g_q["mu"] = g_q["mu"] + g_s @ jac["mu"]
        g_q["omega"] = g_q["omega"] + unvec(g_s @ jac["omega"], spec.latent_dim, spec.latent_dim)
        for key in ("log_eta", "alpha", "beta"):
            if key in g_q:
                if jac.get(key) is None:
                    raise ConfigError(f"no pathwise gradient for {key} with this sampler mode")
                g_q[key] = g_q[key] + float(g_s @ jac[key])
    recon /= r
    if estimator == "closed_kl":
        kld = kld_t1g_vs_standard_normal(q)
        for key, val in kld_t1g_grads(q).items():
            g_q[key] = g_q[key] - val
    else:
        kld = kl_mc / r
    dy, dY = _pack(g_q, spec.recognition)
    g_rec = backward_general(params.rec, rec_trace, dy, dY)
    grads = {f"rec.{k}": v for k, v in g_rec.items()}
    grads.update({f"gen.{k}": v for k, v in g_gen.items()})
    return grads, (data_weight * recon - kld, kld, recon)


# training ------------------------------------------------------------------------

@dataclass
class VaeTrainConfig:
    epochs: int = 20
    batch_size: int = 10
    lr: float = 1e-3
    train_r: int = 1
    eval_r: int = 100
    sampler_mode: str = "gauss-approx"
    record_wall_time: bool = False
    checkpoint_every: int = 0


@dataclass
class TrainResult:
    params: VaeParams
    rows: list = field(default_factory=list)


def evaluate(params: VaeParams, data: np.ndarray, r: int, rng: np.random.Generator, mode: str = "gauss-approx"):
    """Mean ``(elbo, kld, loglik)`` over rows of ``data`` with ``r`` draws each."""
    totals = np.zeros(3)
    for x in data:
        totals += elbo_terms(params, x, draw_noise(params, rng, r, mode=mode, x=x))
    return tuple(totals / len(data))


def train(params: VaeParams, train_data: np.ndarray, test_data: np.ndarray | None, cfg: VaeTrainConfig,
          rng: np.random.Generator, optimizer: Adam | None = None, start_epoch: int = 0, on_epoch=None) -> TrainResult:
    """Mini-batch Adam ascent on the lower bound.

    One metrics row per epoch and split: the train row averages the training
    estimates seen during the epoch, the test row re-evaluates with
    ``eval_r`` draws per datum.
    """
    optimizer = optimizer or Adam(lr=cfg.lr)
    result = TrainResult(params)
    n = len(train_data)
    # on_epoch(epoch, params, optimizer, rng, epoch_rows) runs after each epoch
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        seen = np.zeros(3)
        count = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            total = None
            used = 0
            for i in idx:
                try:
                    noise = draw_noise(params, rng, cfg.train_r, mode=cfg.sampler_mode, x=train_data[i])
                    grads, terms = elbo_grads(params, train_data[i], noise)
                except MatMlpError as exc:
                    log.warning("skipping sample %d in epoch %d: %s", i, epoch, exc)
                    continue
                if not np.isfinite(terms[0]):
                    raise DivergedTraining(f"ELBO is not finite at epoch {epoch}")
                seen += terms
                count += 1
                used += 1
                total = grads if total is None else {k: total[k] + grads[k] for k in total}
            if total is None:
                continue
            # ascend the bound: Adam minimizes, so hand it the negated gradient
            step = {k: -v / used for k, v in total.items()}
            if not all(np.all(np.isfinite(v)) for v in step.values()):
                raise DivergedTraining(f"non-finite gradient at epoch {epoch}")
            params = params.with_tensors(optimizer.step(params.tensors, step))
        if count == 0:
            raise DivergedTraining(f"every sample failed in epoch {epoch}")
        elapsed = (time.perf_counter() - t0) * 1000.0 if cfg.record_wall_time else 0.0
        first_row = len(result.rows)
        result.rows.append((epoch, "train", *(seen / count), elapsed))
        if test_data is not None and len(test_data):
            elbo, kld, ll = evaluate(params, test_data, cfg.eval_r, rng, cfg.sampler_mode)
            if not np.isfinite(elbo):
                raise DivergedTraining(f"held-out ELBO is not finite at epoch {epoch}")
            result.rows.append((epoch, "test", elbo, kld, ll, elapsed))
        result.params = params
        if on_epoch is not None:
            on_epoch(epoch, params, optimizer, rng, result.rows[first_row:])
    return result


def write_metrics(path, rows, config_hash: str | None = None, append: bool = False):
    header = list(METRIC_COLUMNS) + (["config_hash"] if config_hash else [])
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(header)
        for row in rows:
            epoch, split, *vals = row
            out = [epoch, split] + [repr(float(v)) for v in vals]
            w.writerow(out + ([config_hash] if config_hash else []))


def sample_generative(params: VaeParams, n: int, rng: np.random.Generator, mode: str = "gauss-approx") -> np.ndarray:
    """Draw ``n`` data vectors by decoding prior samples."""
    out = []
    for _ in range(n):
        s = rng.standard_normal(params.spec.latent_dim)
        p, _ = decode(params, s)
        if isinstance(p, TraceOneMpe):
            out.append(mpe_sample(p, rng, mode)[0])
        else:
            out.append(t1g_sample(p, rng)[0])
    return np.array(out)


def spec_to_json(spec: VaeModelSpec) -> dict:
    out = asdict(spec)
    out["name"] = spec.name
    out["estimator"] = spec.estimator
    return out
