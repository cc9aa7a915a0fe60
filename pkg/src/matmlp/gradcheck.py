"""Finite-difference suite covering every analytic derivative in the package.

Each check builds a random problem from a seed and returns named pairs
``(analytic, oracle)``. ``run_suite`` compares them with the tolerance of the
check's tier and can flip the sign of one check's analytic result to show
the harness catches a wrong gradient.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import alpha, distributions as dist, losses, network, vae
from .activations import MercerParams, mercer_activation, mercer_activation_jacobian
from .alpha import AlphaJacobian
from .linalg import mat_log_spd, random_trace_one, sym
from .oracles import fd_gradient, fd_jacobian, fd_sym_gradient, relative_error

TOL_SIMPLE = 1e-5
TOL_NETWORK = 1e-4
TOL_ESTIMATOR = 1e-3
ERROR_FLOOR = 1e-8


def _spd_pair(rng, d):
    return random_trace_one(d, rng), random_trace_one(d, rng)


def _dim(rng, lo=2, hi=6):
    return int(rng.integers(lo, hi + 1))


def check_losses(rng):
    d = _dim(rng)
    y_hat, y = _spd_pair(rng, d)
    out = {}
    for name in losses.LOSSES:
        analytic = losses.LOSS_GRADIENTS[name](y_hat, y).reshape(d, d, order="F")
        oracle = fd_sym_gradient(lambda a, name=name: losses.loss_value(name, a, y), y_hat)
        out[name] = (analytic, oracle)
    return out


def check_mercer(rng):
    d = _dim(rng)
    z = rng.standard_normal((d, d))
    p = MercerParams(float(rng.uniform(0.5, 1.5)), float(rng.uniform(-0.3, 0.3)))
    return {
        f"{kind}": (mercer_activation_jacobian(z, p, diagonal), fd_jacobian(lambda a: mercer_activation(a, p, diagonal), z))
        for kind, diagonal in (("full", False), ("diag", True))
    }


def check_alpha_rules(rng):
    d = _dim(rng)
    x = rng.standard_normal((d, d))
    ident = AlphaJacobian.identity((d, d))
    prod = alpha.alpha_product(ident, ident, x, x)
    w = rng.standard_normal((d, d))
    inner = AlphaJacobian(np.kron(np.eye(1), w), (d, 1), (d, 1))
    v = rng.standard_normal((d, 1))
    outer = AlphaJacobian(np.diag(1.0 - np.tanh(w @ v).ravel() ** 2), (d, 1), (d, 1))
    chain = alpha.alpha_chain(outer, inner)
    e = sym(rng.standard_normal((d, d)))
    y = random_trace_one(d, rng)
    tensor = alpha.dlog_through_eig(y)
    h = 1e-6
    directional = (mat_log_spd(y + h * e) - mat_log_spd(y - h * e)) / (2 * h)
    return {
        "product": (prod.entries, fd_jacobian(lambda a: a @ a, x)),
        "chain": (chain.entries, fd_jacobian(lambda a: np.tanh(w @ a), v)),
        "dlog": (tensor.contract(e), directional),
    }


def _away_from_init(params, rng):
    """Move the matrix biases to ``0.5 I`` plus noise.

    At initialization the rank-one input layer makes every kernel output
    nearly rank-one, and finite differences of log-determinants or matrix
    logarithms lose most of their digits to cancellation there. Checking at
    a well-conditioned point keeps the oracle informative.
    """
    tensors = dict(params.tensors)
    for name, value in tensors.items():
        if name.startswith("B"):
            tensors[name] = 0.5 * np.eye(value.shape[0]) + 0.1 * rng.standard_normal(value.shape)
    return params.with_tensors(tensors)


def _param_checks(params, loss_of, analytic, prefix):
    out = {}
    for name, value in params.tensors.items():
        def f(a, name=name):
            t = dict(params.tensors)
            t[name] = a
            return loss_of(params.with_tensors(t))
        out[f"{prefix}.{name}"] = (analytic[name], fd_gradient(f, value))
    return out


def check_backward_basic(rng):
    j = int(rng.integers(0, 3))
    dims = tuple(int(rng.integers(2, 5)) for _ in range(j + 2))
    params = network.BasicMmlpParams.init(dims, (int(rng.integers(1, 4)), int(rng.integers(1, 3))), rng)
    params = _away_from_init(params, rng)
    x = rng.standard_normal(params.input_shape)
    y = random_trace_one(dims[0], rng)
    loss = losses.LOSSES[int(rng.integers(0, 3))]
    trace = network.forward_basic(params, x)
    grads = network.backward_basic(params, trace, losses.LOSS_GRADIENTS[loss](trace.Y_hat, y))
    return _param_checks(params, lambda p: losses.loss_value(loss, network.forward_basic(p, x).Y_hat, y), grads, loss)


def check_backward_general(rng):
    j = int(rng.integers(0, 3))
    dims = tuple(int(rng.integers(2, 5)) for _ in range(j + 2))
    rdims = tuple(int(rng.integers(1, 4)) for _ in range(j + 2))
    params = network.GeneralMmlpParams.init(dims, (3, 1), rng, rdims=rdims, heads="tanh")
    params = _away_from_init(params, rng)
    x = rng.standard_normal((3, 1))
    y = random_trace_one(dims[0], rng)
    weights = rng.standard_normal(rdims[0])

    def total(p):
        t = network.forward_general(p, x)
        return float(weights @ t.y_hat) + losses.qre_loss(t.Y_hat, y)

    trace = network.forward_general(params, x)
    grads = network.backward_general(params, trace, weights, losses.qre_loss_grad(trace.Y_hat, y))
    return _param_checks(params, total, grads, "general")


def check_backward_shallow(rng):
    widths = tuple(int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 4))))
    d0 = int(rng.integers(2, 5))
    params = _away_from_init(network.ShallowParams.init(d0, widths, (4, 1), rng), rng)
    x = rng.standard_normal((4, 1))
    y = random_trace_one(d0, rng)
    trace = network.forward_shallow(params, x)
    grads = network.backward_shallow(params, trace, losses.qre_loss_grad(trace.Y_hat, y))
    return _param_checks(params, lambda p: losses.qre_loss(network.forward_shallow(p, x).Y_hat, y), grads, "shallow")


def _scalar_fd(f, value):
    return float(fd_gradient(lambda v: f(float(v[0])), np.array([value]))[0])


def _vector_fd(f, value):
    return fd_jacobian(lambda v: f(float(v[0])), np.array([value])).ravel()


def check_gaussian(rng):
    d = _dim(rng)
    g = dist.TraceOneGaussian(rng.standard_normal(d), random_trace_one(d, rng), float(rng.normal(0, 0.3)))
    x = rng.standard_normal(d)
    lg = dist.t1g_logpdf_grads(g, x)
    _, eps = dist.t1g_sample(g, rng)
    sg = dist.t1g_sample_grads(g, eps)
    kg = dist.kld_t1g_grads(g)

    def draw(h):
        return dist.t1g_sample(h, None, eps)[0]

    return {
        "logpdf.mu": (lg["mu"], fd_gradient(lambda m: dist.t1g_logpdf(replace(g, mu=m), x), g.mu)),
        "logpdf.omega": (lg["omega"], fd_sym_gradient(lambda o: dist.t1g_logpdf(replace(g, omega=o), x), g.omega)),
        "logpdf.log_eta": (lg["log_eta"], _scalar_fd(lambda v: dist.t1g_logpdf(replace(g, log_eta=v), x), g.log_eta)),
        "sample.mu": (sg["mu"], fd_jacobian(lambda m: draw(replace(g, mu=m)), g.mu)),
        "sample.omega": (sg["omega"], fd_jacobian(lambda o: draw(replace(g, omega=sym(o))), g.omega)),
        "sample.log_eta": (sg["log_eta"], _vector_fd(lambda v: draw(replace(g, log_eta=v)), g.log_eta)),
        "kld.mu": (kg["mu"], fd_gradient(lambda m: dist.kld_t1g_vs_standard_normal(replace(g, mu=m)), g.mu)),
        "kld.omega": (kg["omega"], fd_sym_gradient(lambda o: dist.kld_t1g_vs_standard_normal(replace(g, omega=o)), g.omega)),
        "kld.log_eta": (kg["log_eta"], _scalar_fd(lambda v: dist.kld_t1g_vs_standard_normal(replace(g, log_eta=v)), g.log_eta)),
    }


def check_mpe(rng):
    d = _dim(rng)
    m = dist.TraceOneMpe(rng.standard_normal(d), random_trace_one(d, rng), float(rng.normal(0, 0.3)),
                         float(rng.uniform(0.6, 1.4)), float(rng.uniform(0.6, 1.4)))
    x = m.mu + rng.standard_normal(d)
    lg = dist.mpe_logpdf_grads(m, x)
    _, aux = dist.mpe_sample(m, rng, "gauss-approx")
    sg = dist.mpe_sample_grads(m, aux)
    out = {
        "logpdf.mu": (lg["mu"], fd_gradient(lambda v: dist.mpe_logpdf(replace(m, mu=v), x), m.mu)),
        "logpdf.omega": (lg["omega"], fd_sym_gradient(lambda o: dist.mpe_logpdf(replace(m, omega=o), x), m.omega)),
        "sample.mu": (sg["mu"], fd_jacobian(lambda v: dist.mpe_apply(replace(m, mu=v), aux), m.mu)),
        "sample.omega": (sg["omega"], fd_jacobian(lambda o: dist.mpe_apply(replace(m, omega=sym(o)), aux), m.omega)),
    }
    for key in ("log_eta", "alpha", "beta"):
        cur = getattr(m, key)
        out[f"logpdf.{key}"] = (lg[key], _scalar_fd(lambda v, key=key: dist.mpe_logpdf(replace(m, **{key: v}), x), cur))
        out[f"sample.{key}"] = (sg[key], _vector_fd(lambda v, key=key: dist.mpe_apply(replace(m, **{key: v}), aux), cur))
    return out


def _check_vae(rng, name):
    spec = vae.VaeModelSpec.from_name(name, 2, 3, hidden=(3,), hidden_vec=(2,))
    params = vae.VaeParams.init(spec, rng)
    params = vae.VaeParams(spec, _away_from_init(params.rec, rng), _away_from_init(params.gen, rng))
    x = rng.standard_normal(3)
    noise = vae.draw_noise(params, rng, 1, x=x)
    grads, _ = vae.elbo_grads(params, x, noise)
    return _param_checks(params, lambda p: vae.elbo_terms(p, x, noise)[0], grads, name)


def check_vae_nfnf(rng):
    return _check_vae(rng, "NfNf")


def check_vae_efef(rng):
    return _check_vae(rng, "EfEf")


@dataclass(frozen=True)
class Check:
    name: str
    fn: object
    tol: float
    area: str


CHECKS = (
    Check("losses", check_losses, TOL_SIMPLE, "loss gradients"),
    Check("mercer", check_mercer, TOL_SIMPLE, "kernel Jacobian"),
    Check("alpha_rules", check_alpha_rules, TOL_SIMPLE, "product/chain rules and log derivative"),
    Check("backward_basic", check_backward_basic, TOL_NETWORK, "basic backprop"),
    Check("backward_general", check_backward_general, TOL_NETWORK, "general backprop"),
    Check("backward_shallow", check_backward_shallow, TOL_NETWORK, "shallow backprop"),
    Check("gaussian", check_gaussian, TOL_SIMPLE, "trace-one Gaussian"),
    Check("mpe", check_mpe, TOL_SIMPLE, "mPE"),
    Check("vae_nfnf", check_vae_nfnf, TOL_ESTIMATOR, "closed-form-KL estimator"),
    Check("vae_efef", check_vae_efef, TOL_ESTIMATOR, "Monte-Carlo estimator"),
)
CHECK_NAMES = tuple(c.name for c in CHECKS)


@dataclass
class CheckResult:
    check: str
    seed: int
    item: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.error < self.tol)


def run_suite(seeds, only=None, mutate: str | None = None) -> list[CheckResult]:
    """Run every check (or those named in ``only``) for each seed.

    ``mutate`` names a check whose analytic results are sign-flipped.
    """
    results = []
    for check in CHECKS:
        if only and check.name not in only:
            continue
        for seed in seeds:
            rng = np.random.default_rng([seed, CHECK_NAMES.index(check.name)])
            for item, (analytic, oracle) in check.fn(rng).items():
                analytic = np.asarray(analytic, dtype=float)
                if check.name == mutate:
                    analytic = -analytic
                err = relative_error(analytic, oracle, floor=ERROR_FLOOR)
                results.append(CheckResult(check.name, int(seed), item, err, check.tol))
    return results


def tap_report(results: list[CheckResult]) -> str:
    lines = ["TAP version 13", f"1..{len(results)}"]
    for i, r in enumerate(results, start=1):
        status = "ok" if r.ok else "not ok"
        lines.append(f"{status} {i} - {r.check}/{r.item} seed={r.seed} rel_err={r.error:.3e} tol={r.tol:.0e}")
    return "\n".join(lines) + "\n"


def json_report(results: list[CheckResult], **extra) -> str:
    by_check = {}
    for r in results:
        entry = by_check.setdefault(r.check, {"n": 0, "failed": 0, "max_error": 0.0, "tol": r.tol})
        entry["n"] += 1
        entry["failed"] += int(not r.ok)
        entry["max_error"] = max(entry["max_error"], r.error)
    summary = {
        "total": len(results),
        "failed": sum(not r.ok for r in results),
        "checks": by_check,
        **extra,
    }
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"
