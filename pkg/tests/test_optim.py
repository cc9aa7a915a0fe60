import numpy as np
import pytest
from hypothesis import given, strategies as st

from matmlp.errors import DimensionMismatch
from matmlp.optim import AdamState, adam_step, sgd_step

seeds = st.integers(0, 2**31 - 1)


def test_sgd():
    p = np.array([1.0, -2.0])
    assert np.array_equal(sgd_step(p, np.zeros(2), 0.5), p)
    assert np.array_equal(sgd_step(p, np.ones(2), 0.0), p)
    np.testing.assert_array_equal(sgd_step(np.array([3.0]), np.array([2.0]), 0.25), [2.5])
    with pytest.raises(DimensionMismatch):
        sgd_step(p, np.ones(3), 0.1)


def test_adam_first_step_scalar():
    state = AdamState(lr=0.1)
    state, new = adam_step(state, {"w": np.array([1.0])}, {"w": np.array([4.0])})
    # m = 0.4, v = 0.016; corrected m_hat = 4, v_hat = 16
    m_hat, v_hat = 0.4 / 0.1, 0.016 / 0.001
    assert new["w"][0] == pytest.approx(1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_zero_grad_only_decays_moments():
    state = AdamState(lr=0.1)
    params = {"w": np.array([1.0, 2.0])}
    state, params = adam_step(state, params, {"w": np.array([1.0, -1.0])})
    m_before = state.m["w"].copy()
    v_before = state.v["w"].copy()
    state, after = adam_step(state, params, {"w": np.zeros(2)})
    np.testing.assert_allclose(state.m["w"], 0.9 * m_before)
    np.testing.assert_allclose(state.v["w"], 0.999 * v_before)


@given(seeds)
def test_loop_and_vectorized_agree_bitwise(seed):
    r = np.random.default_rng(seed)
    params = {"a": r.standard_normal((3, 4)), "b": r.standard_normal(5)}
    s1, s2 = AdamState(), AdamState()
    p1 = p2 = params
    for _ in range(4):
        g = {k: r.standard_normal(v.shape) for k, v in params.items()}
        s1, p1 = adam_step(s1, p1, g)
        s2, p2 = adam_step(s2, p2, g, loop=True)
    for k in params:
        assert np.array_equal(p1[k], p2[k])
        assert np.array_equal(s1.m[k], s2.m[k]) and np.array_equal(s1.v[k], s2.v[k])


def test_state_json_round_trip_is_exact(rng):
    state = AdamState(lr=3e-4)
    params = {"w": rng.standard_normal((2, 2))}
    state, _ = adam_step(state, params, {"w": rng.standard_normal((2, 2))})
    back = AdamState.from_json(state.to_json())
    assert back.step == state.step and back.lr == state.lr
    assert np.array_equal(back.m["w"], state.m["w"]) and np.array_equal(back.v["w"], state.v["w"])


def test_shapes_preserved(rng):
    params = {"w": rng.standard_normal((2, 3))}
    _, new = adam_step(AdamState(), params, {"w": rng.standard_normal((2, 3))})
    assert new["w"].shape == (2, 3)
    with pytest.raises(DimensionMismatch):
        adam_step(AdamState(), params, {"w": np.ones(6)})
