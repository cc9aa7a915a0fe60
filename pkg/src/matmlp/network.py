"""The matrix MLP: basic form, general (vector + matrix) form, shallow baseline.

Layers are indexed from the output: layer 0 produces ``Y^ = H(Z_0)`` and
layer ``j + 1`` reads the input. Every layer of the matrix path computes

    Z_l = W_l H_{l+1} W_l^T + B_l,        H_l = K(Z_l) / tr K(Z_l)

and the input layer uses ``Z = W vec(X) (W 1)^T + B``. Backpropagation
carries ``1 x dim^2`` row derivatives of the scalar loss and multiplies them
by dense layer Jacobians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .activations import (
    DEFAULT_MERCER,
    MercerParams,
    apply_heads,
    mercer_activation,
    mercer_activation_jacobian,
)
from .errors import DimensionMismatch
from .linalg import commutation_permutation, unvec, vec

BIAS_INIT = 0.01


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@lru_cache(maxsize=None)
def _inverse_commutation(m: int, n: int) -> np.ndarray:
    return np.argsort(commutation_permutation(m, n))


def times_commutation(mat: np.ndarray, m: int, n: int) -> np.ndarray:
    """``mat @ K(m, n)`` as a column permutation."""
    return mat[:, _inverse_commutation(m, n)]


# layer Jacobians ---------------------------------------------------------------

def dz_dw(w: np.ndarray, h_next: np.ndarray) -> np.ndarray:
    """``D_W (W H W^T) = (W H^T kron I) + (I kron W H) K``."""
    d, dn = w.shape
    eye = np.eye(d)
    return np.kron(w @ h_next.T, eye) + times_commutation(np.kron(eye, w @ h_next), d, dn)


def dz_dh(w: np.ndarray) -> np.ndarray:
    """``D_H (W H W^T) = W kron W``."""
    return np.kron(w, w)


def dz_dw_input(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``D_W (W x (W 1)^T)`` for a vector input ``x``."""
    d, p = w.shape
    x = np.ravel(x)
    v = w.sum(axis=1)
    u = w @ x
    eye = np.eye(d)
    first = np.kron(np.outer(v, x), eye)
    second = times_commutation(np.kron(eye, np.outer(u, np.ones(p))), d, p)
    return first + second


def dz_dx_input(w: np.ndarray) -> np.ndarray:
    """``D_x (W x (W 1)^T) = (W 1) kron W``."""
    return np.kron(w.sum(axis=1)[:, None], w)


def input_layer(w, x, b):
    x = np.ravel(x)
    return np.outer(w @ x, w.sum(axis=1)) + b


# parameters --------------------------------------------------------------------

@dataclass
class BasicMmlpParams:
    """Weights ``W_l`` (``d_l x d_{l+1}``, last one ``d_{j+1} x p1 p2``) and biases ``B_l``."""

    dims: tuple[int, ...]
    input_shape: tuple[int, int]
    tensors: dict[str, np.ndarray]
    output_diagonal: bool = False
    kernel: MercerParams = DEFAULT_MERCER

    @property
    def n_layers(self) -> int:
        return len(self.dims)

    @property
    def input_size(self) -> int:
        return self.input_shape[0] * self.input_shape[1]

    def weight(self, l):
        return self.tensors[f"W{l}"]

    def bias(self, l):
        return self.tensors[f"B{l}"]

    def expected_shapes(self) -> dict[str, tuple[int, int]]:
        L = self.n_layers
        shapes = {}
        for l in range(L):
            nxt = self.dims[l + 1] if l < L - 1 else self.input_size
            shapes[f"W{l}"] = (self.dims[l], nxt)
            shapes[f"B{l}"] = (self.dims[l], self.dims[l])
        return shapes

    def validate(self):
        for name, shape in self.expected_shapes().items():
            if name not in self.tensors or self.tensors[name].shape != shape:
                got = self.tensors.get(name, np.empty(0)).shape
                raise DimensionMismatch(f"{name}: expected {shape}, got {got}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ValueError(f"{name} has non-finite entries")

    def with_tensors(self, tensors):
        return type(self)(**{**self.__dict__, "tensors": dict(tensors)})

    @classmethod
    def init(cls, dims, input_shape, rng: np.random.Generator, **kw):
        dims = tuple(int(d) for d in dims)
        p = input_shape[0] * input_shape[1]
        tensors = {}
        for l, d in enumerate(dims):
            nxt = dims[l + 1] if l < len(dims) - 1 else p
            tensors[f"W{l}"] = glorot(rng, d, nxt)
            tensors[f"B{l}"] = BIAS_INIT * np.eye(d)
        return cls(dims, tuple(input_shape), tensors, **kw)


@dataclass
class GeneralMmlpParams(BasicMmlpParams):
    """Adds the vector path: ``A_l`` (``d_l x r_{l+1}``), ``C_l`` (``r_l x d_l``), ``b_l``.

    The input layer's ``A_{j+1}`` is ``d_{j+1} x r_{j+1}`` and multiplies a
    ones vector of length ``r_{j+1}``. ``heads`` gives the output activation
    of ``y^`` (one name, or one per component); hidden units use tanh.
    """

    rdims: tuple[int, ...] = ()
    heads: tuple[str, ...] | str = "linear"

    def right_map(self, l):
        return self.tensors[f"A{l}"]

    def left_map(self, l):
        return self.tensors[f"C{l}"]

    def vec_bias(self, l):
        return self.tensors[f"b{l}"]

    def expected_shapes(self):
        shapes = super().expected_shapes()
        L = self.n_layers
        if len(self.rdims) != L:
            raise DimensionMismatch("need one vector width per matrix layer")
        for l in range(L):
            nxt = self.rdims[l + 1] if l < L - 1 else self.rdims[l]
            shapes[f"A{l}"] = (self.dims[l], nxt)
            shapes[f"C{l}"] = (self.rdims[l], self.dims[l])
            shapes[f"b{l}"] = (self.rdims[l],)
        return shapes

    @classmethod
    def init(cls, dims, input_shape, rng, rdims=(), heads="linear", **kw):
        base = BasicMmlpParams.init(dims, input_shape, rng)
        dims = base.dims
        rdims = tuple(int(r) for r in rdims)
        tensors = dict(base.tensors)
        L = len(dims)
        for l in range(L):
            nxt = rdims[l + 1] if l < L - 1 else rdims[l]
            tensors[f"A{l}"] = glorot(rng, dims[l], nxt)
            tensors[f"C{l}"] = glorot(rng, rdims[l], dims[l])
            tensors[f"b{l}"] = np.zeros(rdims[l])
        if not isinstance(heads, str):
            heads = tuple(heads)
        return cls(dims, tuple(input_shape), tensors, rdims=rdims, heads=heads, **kw)


@dataclass
class ShallowParams:
    """Standard tanh MLP with a kernel head only at the output.

    ``W0`` is ``d_0 x r_1``; ``W_l`` is ``r_l x r_{l+1}``; the last weight
    maps ``vec X``.
    """

    d0: int
    widths: tuple[int, ...]  # r_1 .. r_{j+1}
    input_shape: tuple[int, int]
    tensors: dict[str, np.ndarray]
    kernel: MercerParams = DEFAULT_MERCER

    @property
    def input_size(self):
        return self.input_shape[0] * self.input_shape[1]

    def with_tensors(self, tensors):
        return type(self)(**{**self.__dict__, "tensors": dict(tensors)})

    def expected_shapes(self):
        shapes = {"W0": (self.d0, self.widths[0]), "B0": (self.d0, self.d0)}
        n = len(self.widths)
        for l in range(1, n + 1):
            nxt = self.widths[l] if l < n else self.input_size
            shapes[f"W{l}"] = (self.widths[l - 1], nxt)
            shapes[f"b{l}"] = (self.widths[l - 1],)
        return shapes

    def validate(self):
        for name, shape in self.expected_shapes().items():
            if self.tensors[name].shape != shape:
                raise DimensionMismatch(f"{name}: expected {shape}, got {self.tensors[name].shape}")

    @classmethod
    def init(cls, d0, widths, input_shape, rng, **kw):
        widths = tuple(int(w) for w in widths)
        p = input_shape[0] * input_shape[1]
        tensors = {"W0": glorot(rng, d0, widths[0]), "B0": BIAS_INIT * np.eye(d0)}
        for l in range(1, len(widths) + 1):
            nxt = widths[l] if l < len(widths) else p
            tensors[f"W{l}"] = glorot(rng, widths[l - 1], nxt)
            tensors[f"b{l}"] = np.zeros(widths[l - 1])
        return cls(int(d0), widths, tuple(input_shape), tensors, **kw)


@dataclass
class ForwardTrace:
    """Stored latents of one forward pass; ``mats[0]`` is ``Y^`` and ``pre_mats`` holds the kernel inputs."""

    x: np.ndarray
    pre_mats: list = field(default_factory=list)
    mats: list = field(default_factory=list)
    pre_vecs: list = field(default_factory=list)
    vecs: list = field(default_factory=list)

    @property
    def Y_hat(self):
        return self.mats[0]

    @property
    def y_hat(self):
        return self.vecs[0] if self.vecs else None


# basic form ---------------------------------------------------------------------

def _is_output_diag(params, l):
    return l == 0 and params.output_diagonal


def forward_basic(params: BasicMmlpParams, inputs) -> ForwardTrace:
    x = vec(np.asarray(inputs, dtype=float))
    if x.size != params.input_size:
        raise DimensionMismatch(f"input has {x.size} entries, expected {params.input_size}")
    L = params.n_layers
    pre = [None] * L
    mats = [None] * L
    pre[L - 1] = input_layer(params.weight(L - 1), x, params.bias(L - 1))
    mats[L - 1] = mercer_activation(pre[L - 1], params.kernel, _is_output_diag(params, L - 1))
    for l in range(L - 2, -1, -1):
        w = params.weight(l)
        pre[l] = w @ mats[l + 1] @ w.T + params.bias(l)
        mats[l] = mercer_activation(pre[l], params.kernel, _is_output_diag(params, l))
    return ForwardTrace(x=x, pre_mats=pre, mats=mats)


def backward_basic(params: BasicMmlpParams, trace: ForwardTrace, dloss_dY: np.ndarray, with_input: bool = False):
    """Parameter gradients given the loss row-derivative ``D_{Y^} loss`` (length ``d_0^2``).

    Returns a dict shaped like ``params.tensors``; with ``with_input`` also the
    gradient with respect to ``vec X``.
    """
    L = params.n_layers
    grads = {}
    g_H = np.asarray(dloss_dY, dtype=float).reshape(-1)
    g_x = None
    for l in range(L):
        d = params.dims[l]
        g_Z = g_H @ mercer_activation_jacobian(trace.pre_mats[l], params.kernel, _is_output_diag(params, l))
        grads[f"B{l}"] = unvec(g_Z, d, d)
        w = params.weight(l)
        if l < L - 1:
            grads[f"W{l}"] = unvec(g_Z @ dz_dw(w, trace.mats[l + 1]), *w.shape)
            g_H = g_Z @ dz_dh(w)
        else:
            grads[f"W{l}"] = unvec(g_Z @ dz_dw_input(w, trace.x), *w.shape)
            if with_input:
                g_x = g_Z @ dz_dx_input(w)
    return (grads, g_x) if with_input else grads


# general form ------------------------------------------------------------------

def forward_general(params: GeneralMmlpParams, inputs) -> ForwardTrace:
    """Matrix path as in the basic form, interleaved with the vector path

    ``z_l = C_l H_l A_l h_{l+1} + b_l``; ``h_l = tanh(z_l)`` for hidden layers
    and ``y^ = heads(z_0)`` at the output (``z_0`` consumes ``Y^``).
    """
    trace = forward_basic(params, inputs)
    L = params.n_layers
    pre = [None] * L
    vecs = [None] * L
    for l in range(L - 1, -1, -1):
        v_next = vecs[l + 1] if l < L - 1 else np.ones(params.rdims[l])
        pre[l] = params.left_map(l) @ trace.mats[l] @ params.right_map(l) @ v_next + params.vec_bias(l)
        if l == 0:
            vecs[l], _ = apply_heads(pre[l], params.heads)
        else:
            vecs[l] = np.tanh(pre[l])
    trace.pre_vecs = pre
    trace.vecs = vecs
    return trace


def backward_general(params: GeneralMmlpParams, trace: ForwardTrace, dloss_dy, dloss_dY, with_input: bool = False):
    """Gradients for every ``W, B, A, C, b`` given ``D_{y^} loss`` and ``D_{Y^} loss``.

    Either loss derivative may be ``None`` (treated as zero). The matrix
    derivative reaching ``H_l`` is the sum of the part coming down the matrix
    path and the part from ``z_l``.
    """
    L = params.n_layers
    grads = {}
    g_h = np.zeros(params.rdims[0]) if dloss_dy is None else np.asarray(dloss_dy, dtype=float).reshape(-1)
    d0 = params.dims[0]
    g_H = np.zeros(d0 * d0) if dloss_dY is None else np.asarray(dloss_dY, dtype=float).reshape(-1)
    g_x = None
    for l in range(L):
        d, r = params.dims[l], params.rdims[l]
        mat = trace.mats[l]
        right, left = params.right_map(l), params.left_map(l)
        if l == 0:
            _, act_grad = apply_heads(trace.pre_vecs[0], params.heads)
        else:
            act_grad = 1.0 - trace.vecs[l] ** 2
        g_z = g_h * act_grad
        h_next = trace.vecs[l + 1] if l < L - 1 else np.ones(params.rdims[l])
        a_h = right @ h_next
        grads[f"b{l}"] = g_z.copy()
        grads[f"C{l}"] = unvec(g_z @ np.kron((mat @ a_h)[None, :], np.eye(r)), r, d)
        grads[f"A{l}"] = unvec(g_z @ np.kron(h_next[None, :], left @ mat), *right.shape)
        g_H = g_H + g_z @ np.kron(a_h[None, :], left)
        if l < L - 1:
            g_h = g_z @ (left @ mat @ right)
        g_Z = g_H @ mercer_activation_jacobian(trace.pre_mats[l], params.kernel, _is_output_diag(params, l))
        grads[f"B{l}"] = unvec(g_Z, d, d)
        w = params.weight(l)
        if l < L - 1:
            grads[f"W{l}"] = unvec(g_Z @ dz_dw(w, trace.mats[l + 1]), *w.shape)
            g_H = g_Z @ dz_dh(w)
        else:
            grads[f"W{l}"] = unvec(g_Z @ dz_dw_input(w, trace.x), *w.shape)
            if with_input:
                g_x = g_Z @ dz_dx_input(w)
    return (grads, g_x) if with_input else grads


# shallow baseline ---------------------------------------------------------------

def forward_shallow(params: ShallowParams, inputs) -> ForwardTrace:
    """tanh hidden layers, kernel head ``Z_0 = W_0 h_1 (W_0 1)^T + B_0``."""
    x = vec(np.asarray(inputs, dtype=float))
    n = len(params.widths)
    vecs = [None] * (n + 2)
    pre = [None] * (n + 2)
    prev = x
    for l in range(n, 0, -1):
        pre[l] = params.tensors[f"W{l}"] @ prev + params.tensors[f"b{l}"]
        vecs[l] = np.tanh(pre[l])
        prev = vecs[l]
    pre_out = input_layer(params.tensors["W0"], vecs[1], params.tensors["B0"])
    out = mercer_activation(pre_out, params.kernel)
    return ForwardTrace(x=x, pre_mats=[pre_out], mats=[out], pre_vecs=pre, vecs=vecs)


def backward_shallow(params: ShallowParams, trace: ForwardTrace, dloss_dY):
    grads = {}
    d0 = params.d0
    g_Z = np.asarray(dloss_dY, dtype=float).reshape(-1) @ mercer_activation_jacobian(trace.pre_mats[0], params.kernel)
    grads["B0"] = unvec(g_Z, d0, d0)
    w0 = params.tensors["W0"]
    grads["W0"] = unvec(g_Z @ dz_dw_input(w0, trace.vecs[1]), *w0.shape)
    g_h = g_Z @ dz_dx_input(w0)
    n = len(params.widths)
    for l in range(1, n + 1):
        g_z = g_h * (1.0 - trace.vecs[l] ** 2)
        below = trace.vecs[l + 1] if l < n else trace.x
        grads[f"b{l}"] = g_z
        grads[f"W{l}"] = np.outer(g_z, below)
        g_h = g_z @ params.tensors[f"W{l}"]
    return grads


def forward(params, inputs) -> ForwardTrace:
    if isinstance(params, ShallowParams):
        return forward_shallow(params, inputs)
    if isinstance(params, GeneralMmlpParams):
        return forward_general(params, inputs)
    return forward_basic(params, inputs)


def backward(params, trace, dloss_dY):
    if isinstance(params, ShallowParams):
        return backward_shallow(params, trace, dloss_dY)
    if isinstance(params, GeneralMmlpParams):
        return backward_general(params, trace, None, dloss_dY)
    return backward_basic(params, trace, dloss_dY)


def update_params(params, grads, optimizer):
    """One optimizer step; ``optimizer.step(tensors, grads)`` returns new tensors."""
    return params.with_tensors(optimizer.step(params.tensors, grads))
