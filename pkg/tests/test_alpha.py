import numpy as np
import pytest
from hypothesis import given, strategies as st

from matmlp.alpha import (
    AlphaJacobian,
    DegenerateSpectrum,
    alpha_chain,
    alpha_product,
    dlog_through_eig,
    eigenvalue_partials,
)
from matmlp.linalg import kron, mat_log_spd, random_spd, sym_eig
from matmlp.oracles import fd_jacobian, relative_error

seeds = st.integers(0, 2**31 - 1)


def test_product_with_constant_factor(rng):
    x = rng.standard_normal((3, 2))
    c = rng.standard_normal((2, 4))
    dx = AlphaJacobian.identity((3, 2))
    dc = AlphaJacobian.constant((2, 4), (3, 2))
    np.testing.assert_allclose(alpha_product(dx, dc, x, c).entries, kron(c.T, np.eye(3)))

    c2 = rng.standard_normal((4, 3))
    d_left = alpha_product(AlphaJacobian.constant((4, 3), (3, 2)), dx, c2, x)
    np.testing.assert_allclose(d_left.entries, kron(np.eye(2), c2))


def test_product_square_vs_fd(rng):
    x = rng.standard_normal((2, 2))
    dx = AlphaJacobian.identity((2, 2))
    analytic = alpha_product(dx, dx, x, x).entries
    assert relative_error(analytic, fd_jacobian(lambda a: a @ a, x)) < 1e-6


def test_chain_identities(rng):
    inner = AlphaJacobian(rng.standard_normal((6, 4)), (3, 2), (2, 2))
    assert np.array_equal(alpha_chain(AlphaJacobian.identity((3, 2)), inner).entries, inner.entries)
    assert np.array_equal(alpha_chain(inner, AlphaJacobian.identity((2, 2))).entries, inner.entries)


def test_chain_tanh_of_linear(rng):
    w = rng.standard_normal((3, 4))
    x = rng.standard_normal((4, 1))
    inner = AlphaJacobian(kron(np.eye(1), w), (3, 1), (4, 1))
    outer = AlphaJacobian(np.diag(1 - np.tanh(w @ x).ravel() ** 2), (3, 1), (3, 1))
    analytic = (outer @ inner).entries
    assert relative_error(analytic, fd_jacobian(lambda v: np.tanh(w @ v), x)) < 1e-6


def test_chain_shape_mismatch():
    with pytest.raises(ValueError):
        alpha_chain(AlphaJacobian.identity((2, 2)), AlphaJacobian.identity((3, 1)))


def test_dlog_diagonal_case():
    y = np.diag([0.7, 0.3])
    t = dlog_through_eig(y)
    # d log(Y)_11 / d Y_11 = 1 / lambda_1 at a diagonal point
    assert t.slices[0, 0][0, 0] == pytest.approx(1 / 0.7)
    partials = eigenvalue_partials(sym_eig(y))
    # d log(lambda_1)/dY_11 = (1/lambda_1) * dlambda_1/dY_11 with dlambda/dY_11 = 1
    assert partials[0, 0, 0] == pytest.approx(1.0)
    sym_dir = np.array([[0.0, 0.5], [0.5, 0.0]])
    fd = (mat_log_spd(y + 1e-6 * sym_dir) - mat_log_spd(y - 1e-6 * sym_dir)) / 2e-6
    np.testing.assert_allclose(t.contract(np.array([[0.0, 1.0], [0.0, 0.0]])), fd, atol=1e-8)


def test_eigenvalue_partials_formula(rng):
    eig = sym_eig(random_spd(4, rng))
    p = eigenvalue_partials(eig)
    u = eig.vectors
    for i in range(4):
        for j in range(4):
            np.testing.assert_array_equal(p[i, j], u[i] * u[j])


def test_logdet_identity(rng):
    y = random_spd(4, rng)
    t = dlog_through_eig(y)
    # trace of d log Y / dY_ij is d logdet / dY_ij = (Y^{-1})_ij
    traces = np.einsum("ijaa->ij", t.slices)
    np.testing.assert_allclose(traces, np.linalg.inv(y), rtol=1e-6)


@given(seeds, st.integers(2, 6))
def test_dlog_directional_matches_fd(seed, d):
    r = np.random.default_rng(seed)
    y = random_spd(d, r)
    e = r.standard_normal((d, d))
    e = e + e.T
    t = dlog_through_eig(y)
    h = 1e-6
    fd = (mat_log_spd(y + h * e) - mat_log_spd(y - h * e)) / (2 * h)
    assert relative_error(t.contract(e), fd) < 1e-5
    assert np.array_equal(t.slices, t.slices.transpose(1, 0, 2, 3))


def test_log_divisor_variant_disagrees_with_fd(rng):
    # the alternative divisor is kept for comparison and is not a derivative of log Y
    y = random_spd(3, rng)
    e = rng.standard_normal((3, 3))
    e = e + e.T
    fd = (mat_log_spd(y + 1e-6 * e) - mat_log_spd(y - 1e-6 * e)) / 2e-6
    assert relative_error(dlog_through_eig(y, variant="log").contract(e), fd) > 1e-3


def test_degenerate_spectrum_raises():
    with pytest.raises(DegenerateSpectrum):
        dlog_through_eig(np.eye(3) / 3)
