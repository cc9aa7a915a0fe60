import numpy as np
import pytest

from matmlp.alpha import AlphaJacobian, alpha_product
from matmlp.errors import NonFinite
from matmlp.linalg import kron
from matmlp.oracles import energy_test, fd_jacobian, fd_step, mc_moments, relative_error


def test_linear_map_exact(rng):
    a = rng.standard_normal((3, 3))
    x = rng.standard_normal((3, 2))
    assert np.max(np.abs(fd_jacobian(lambda v: a @ v, x) - kron(np.eye(2), a))) < 1e-9


def test_quadratic_map_vs_product_rule(rng):
    x = rng.standard_normal((3, 3))
    dx = AlphaJacobian.identity((3, 3))
    assert relative_error(fd_jacobian(lambda v: v @ v, x), alpha_product(dx, dx, x, x).entries) < 1e-8


def test_second_order_convergence():
    x = np.array([[0.7]])
    exact = np.cos(0.7)
    errs = [abs(fd_jacobian(np.sin, x, h)[0, 0] - exact) for h in (1e-2, 5e-3)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_default_step():
    np.testing.assert_allclose(fd_step(np.array([0.0, -3.0])), [1e-6, 4e-6])


def test_nonfinite_raises():
    with pytest.raises(NonFinite):
        fd_jacobian(lambda v: 1.0 / v if v[0, 0] > 0 else np.full_like(v, np.inf), np.array([[0.0]]))


def test_mc_moments_standard_normal():
    rng = np.random.default_rng(7)
    mean, cov, mean_se, cov_se = mc_moments(lambda n: rng.standard_normal((n, 3)), 20000)
    assert np.all(np.abs(mean) < 3 * mean_se + 1e-12)
    assert np.all(np.abs(cov - np.eye(3)) < 3.5 * cov_se)


def test_mc_standard_error_rate(rng):
    se = [mc_moments(lambda n: rng.standard_normal((n, 2)), n)[2].mean() for n in (1000, 16000)]
    assert se[0] / se[1] == pytest.approx(4.0, rel=0.1)


def test_energy_test(rng):
    a = rng.standard_normal((150, 2))
    b = rng.standard_normal((150, 2))
    assert energy_test(a, b, rng)[1] > 0.01
    assert energy_test(a, b + 1.0, rng)[1] < 0.01
