"""Masked SGD+momentum and Adam, plus per-epoch learning-rate schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mask import Mask
from .tensor import ParamStore, ShapeError


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "constant"          # constant | cosine | cosine_warmup
    lr0: float = 1e-3
    delta: float = 0.05
    epochs: int = 1
    warmup_epochs: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "cosine_warmup"):
            raise ValueError(f"unknown lr schedule {self.kind!r}")
        if self.lr0 <= 0 or self.epochs < 1:
            raise ValueError("lr0 must be > 0 and epochs >= 1")
        if self.kind == "cosine_warmup" and not 0 < self.warmup_epochs < self.epochs:
            raise ValueError("cosine_warmup needs 0 < warmup_epochs < epochs")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate used throughout ``epoch`` (1-based; 0 is the pre-training point).

    The cosine decay is a quarter period stretched by ``1 + delta``, so the
    final rate is ``lr0 * cos(pi / (2 (1 + delta)))`` and stays positive.
    """
    s = schedule
    if not 0 <= epoch <= s.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {s.epochs}]")
    if s.kind == "constant":
        return s.lr0
    if s.kind == "cosine":
        return s.lr0 * math.cos(0.5 * math.pi * epoch / ((1 + s.delta) * s.epochs))
    w = s.warmup_epochs
    if epoch <= w:
        return s.lr0 * epoch / w
    span = s.epochs - w
    return s.lr0 * math.cos(0.5 * math.pi * (epoch - w) / ((1 + s.delta) * span))


@dataclass
class OptimizerState:
    kind: str = "adam"              # adam | sgd_momentum
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def make_optimizer(kind: str, weight_decay: float = 0.0, **kwargs) -> OptimizerState:
    if kind == "sgd":
        kind = "sgd_momentum"
    return OptimizerState(kind=kind, weight_decay=weight_decay, **kwargs)


def step(state: OptimizerState, params: ParamStore, grads: dict[str, np.ndarray],
         mask: Mask | None, lr: float) -> None:
    """One in-place update of ``params``.

    The gradient is masked before it enters the moment buffers and the
    final update is masked again, so masked coordinates never move.
    Weight decay is decoupled and touches only unmasked prunable entries.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    masks = mask.tensor_masks() if mask is not None else {}
    state.t += 1
    t = state.t
    for entry in params:
        name = entry.name
        theta = entry.tensor
        g = grads.get(name)
        if g is None:
            raise ShapeError(f"missing gradient for {name}")
        if g.shape != theta.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != {theta.shape}")
        m = masks.get(name)
        if m is not None:
            g = np.where(m, g, 0).astype(theta.dtype, copy=False)
        buf = state.buffers.get(name)
        if buf is None:
            if state.kind == "adam":
                buf = {"m": np.zeros_like(theta), "v": np.zeros_like(theta)}
            else:
                buf = {"velocity": np.zeros_like(theta)}
            state.buffers[name] = buf
        if state.kind == "adam":
            buf["m"] *= state.beta1
            buf["m"] += (1 - state.beta1) * g
            buf["v"] *= state.beta2
            buf["v"] += (1 - state.beta2) * (g * g)
            m_hat = buf["m"] / (1 - state.beta1 ** t)
            v_hat = buf["v"] / (1 - state.beta2 ** t)
            update = lr * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            buf["velocity"] *= state.momentum
            buf["velocity"] += g
            update = lr * buf["velocity"]
        if state.weight_decay and entry.prunable:
            update = update + lr * state.weight_decay * theta
        if m is not None:
            update = np.where(m, update, 0)
        theta -= update.astype(theta.dtype, copy=False)
