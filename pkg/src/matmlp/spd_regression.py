"""Training and evaluating mMLPs that regress trace-one SPD targets."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, DegenerateSpectrum, DivergedTraining, NotPositiveDefinite
from .losses import LOSSES, jitter, loss_grad_with_jitter, loss_value
from .network import backward, forward
from .optim import Adam

log = logging.getLogger(__name__)

ERROR_MEASURES = {"E_quad": "quad", "E_QRE": "qre", "E_Stein": "stein"}


@dataclass
class TrainConfig:
    loss: str = "qre"
    epochs: int = 200
    batch_size: int = 5
    lr: float = 1e-3

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")


def safe_loss(name: str, y_hat, y) -> float:
    """Loss value, with the jitter retry applied to a singular prediction."""
    try:
        return loss_value(name, y_hat, y)
    except (NotPositiveDefinite, DegenerateSpectrum):
        return loss_value(name, jitter(y_hat)[0], y)


def batch_gradients(params, inputs, targets, loss: str):
    """Average parameter gradients and loss over a mini-batch.

    Samples whose loss gradient fails even after jitter are dropped.
    """
    total = None
    used = 0
    value = 0.0
    for x, y in zip(inputs, targets):
        trace = forward(params, x.reshape(params.input_shape, order="F"))
        g_out, delta = loss_grad_with_jitter(loss, trace.Y_hat, y)
        if delta:
            log.info("loss gradient needed jitter %.3e", delta)
        if g_out is None:
            continue
        grads = backward(params, trace, g_out)
        value += safe_loss(loss, trace.Y_hat, y)
        used += 1
        if total is None:
            total = grads
        else:
            for k in total:
                total[k] = total[k] + grads[k]
    if used == 0:
        return None, float("nan")
    return {k: v / used for k, v in total.items()}, value / used


def train_spd(params, data: Dataset, cfg: TrainConfig, rng: np.random.Generator, optimizer: Adam | None = None,
              on_epoch=None):
    """Mini-batch Adam on one loss. Returns the trained params and the per-epoch train loss."""
    optimizer = optimizer or Adam(lr=cfg.lr)
    history = []
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads, value = batch_gradients(params, data.inputs[idx], data.targets[idx], cfg.loss)
            if grads is None:
                continue
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergedTraining(f"non-finite loss or gradient at epoch {epoch}")
            params = params.with_tensors(optimizer.step(params.tensors, grads))
            losses.append(value)
        history.append(float(np.mean(losses)) if losses else float("nan"))
        if on_epoch is not None:
            on_epoch(epoch, history[-1], params, optimizer)
    return params, history


def evaluate_spd(params, data: Dataset) -> dict[str, float]:
    """Mean of every error measure over a dataset."""
    sums = dict.fromkeys(ERROR_MEASURES, 0.0)
    for x, y in zip(data.inputs, data.targets):
        y_hat = forward(params, x.reshape(params.input_shape, order="F")).Y_hat
        for key, name in ERROR_MEASURES.items():
            sums[key] += safe_loss(name, y_hat, y)
    return {k: v / len(data) for k, v in sums.items()}
