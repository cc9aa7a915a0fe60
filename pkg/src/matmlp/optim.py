"""Plain SGD and Adam over dicts of named parameter arrays."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """``param - lr * grad``."""
    if np.shape(param) != np.shape(grad):
        raise DimensionMismatch(f"gradient shape {np.shape(grad)} != parameter shape {np.shape(param)}")
    return param - lr * grad


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step,
            "m": {k: _array_json(a) for k, a in self.m.items()},
            "v": {k: _array_json(a) for k, a in self.v.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AdamState":
        return cls(obj["lr"], obj["beta1"], obj["beta2"], obj["eps"], obj["step"],
                   {k: _array_from_json(a) for k, a in obj["m"].items()},
                   {k: _array_from_json(a) for k, a in obj["v"].items()})


def _array_json(a: np.ndarray) -> dict:
    # float.hex keeps the round trip exact
    return {"shape": list(a.shape), "data": [float(x).hex() for x in np.ravel(a)]}


def _array_from_json(obj: dict) -> np.ndarray:
    return np.array([float.fromhex(x) for x in obj["data"]], dtype=float).reshape(obj["shape"])


def _bias_corrections(state: AdamState, t: int):
    return 1.0 - state.beta1 ** t, 1.0 - state.beta2 ** t


def adam_update(state: AdamState, name: str, param: np.ndarray, grad: np.ndarray, t: int) -> np.ndarray:
    """Vectorized moment update for one tensor at step ``t`` (mutates the moments)."""
    if param.shape != grad.shape:
        raise DimensionMismatch(f"{name}: gradient {grad.shape} vs parameter {param.shape}")
    m = state.m.get(name, np.zeros_like(param))
    v = state.v.get(name, np.zeros_like(param))
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * (grad * grad)
    c1, c2 = _bias_corrections(state, t)
    state.m[name], state.v[name] = m, v
    return param - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def adam_update_loop(state: AdamState, name: str, param: np.ndarray, grad: np.ndarray, t: int) -> np.ndarray:
    """Elementwise reference for :func:`adam_update`; same operation order, so results agree bitwise."""
    m = state.m.get(name, np.zeros_like(param)).copy()
    v = state.v.get(name, np.zeros_like(param)).copy()
    out = np.array(param, dtype=float, copy=True)
    c1, c2 = _bias_corrections(state, t)
    for idx in np.ndindex(param.shape):
        g = float(grad[idx])
        mi = state.beta1 * float(m[idx]) + (1.0 - state.beta1) * g
        vi = state.beta2 * float(v[idx]) + (1.0 - state.beta2) * (g * g)
        m[idx], v[idx] = mi, vi
        out[idx] = float(param[idx]) - state.lr * (mi / c1) / (math.sqrt(vi / c2) + state.eps)
    state.m[name], state.v[name] = m, v
    return out


def adam_step(state: AdamState, params: dict, grads: dict, loop: bool = False):
    """One Adam step over every named tensor; returns ``(state, new_params)``."""
    state.step += 1
    update = adam_update_loop if loop else adam_update
    new = {name: update(state, name, params[name], grads[name], state.step) for name in params}
    return state, new


class Adam:
    """Stateful wrapper used by the training loops."""

    def __init__(self, state: AdamState | None = None, **hyper):
        self.state = state if state is not None else AdamState(**hyper)

    def step(self, params: dict, grads: dict) -> dict:
        self.state, new = adam_step(self.state, params, grads)
        return new


class Sgd:
    def __init__(self, lr: float = 1e-2):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> dict:
        return {name: sgd_step(params[name], grads[name], self.lr) for name in params}
