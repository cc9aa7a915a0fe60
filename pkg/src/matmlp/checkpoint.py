"""JSON checkpoints for models, optimizer state and RNG state.

Floats are stored as ``float.hex`` strings in row-major order so a resumed
run continues bitwise where the saved one stopped.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .activations import MercerParams
from .errors import FormatError
from .network import BasicMmlpParams, GeneralMmlpParams, ShallowParams
from .optim import AdamState

FORMAT_VERSION = 1


def array_to_json(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(x).hex() for x in a.ravel(order="C")]}


def array_from_json(obj: dict) -> np.ndarray:
    try:
        data = [float.fromhex(x) for x in obj["data"]]
        return np.array(data, dtype=float).reshape(obj["shape"], order="C")
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad array record: {exc}") from exc


def params_to_json(params) -> dict:
    kernel = {"slope": params.kernel.slope, "intercept": params.kernel.intercept}
    tensors = {k: array_to_json(v) for k, v in params.tensors.items()}
    if isinstance(params, ShallowParams):
        return {"kind": "shallow", "d0": params.d0, "widths": list(params.widths),
                "input_shape": list(params.input_shape), "kernel": kernel, "tensors": tensors}
    out = {"kind": "basic", "dims": list(params.dims), "input_shape": list(params.input_shape),
           "output_diagonal": params.output_diagonal, "kernel": kernel, "tensors": tensors}
    if isinstance(params, GeneralMmlpParams):
        out["kind"] = "general"
        out["rdims"] = list(params.rdims)
        out["heads"] = params.heads if isinstance(params.heads, str) else list(params.heads)
    return out


def params_from_json(obj: dict):
    tensors = {k: array_from_json(v) for k, v in obj["tensors"].items()}
    kernel = MercerParams(**obj["kernel"])
    kind = obj.get("kind")
    if kind == "shallow":
        p = ShallowParams(obj["d0"], tuple(obj["widths"]), tuple(obj["input_shape"]), tensors, kernel)
    elif kind == "basic":
        p = BasicMmlpParams(tuple(obj["dims"]), tuple(obj["input_shape"]), tensors, obj["output_diagonal"], kernel)
    elif kind == "general":
        heads = obj["heads"] if isinstance(obj["heads"], str) else tuple(obj["heads"])
        p = GeneralMmlpParams(tuple(obj["dims"]), tuple(obj["input_shape"]), tensors, obj["output_diagonal"],
                              kernel, rdims=tuple(obj["rdims"]), heads=heads)
    else:
        raise FormatError(f"unknown model kind {kind!r}")
    p.validate()
    return p


def save_checkpoint(path, models: dict, optimizer: AdamState | None, rng: np.random.Generator, extra: dict | None = None):
    doc = {
        "format_version": FORMAT_VERSION,
        "models": {name: params_to_json(p) for name, p in models.items()},
        "optimizer": None if optimizer is None else optimizer.to_json(),
        "rng_state": rng.bit_generator.state,
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path):
    """Returns ``(models, optimizer_state, rng, extra)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not JSON (line {exc.lineno})") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    models = {name: params_from_json(p) for name, p in doc["models"].items()}
    opt = None if doc["optimizer"] is None else AdamState.from_json(doc["optimizer"])
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    return models, opt, rng, doc.get("extra", {})
