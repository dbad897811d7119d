"""Masked mini-batch training shared by every variant."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import BatchPlan, Dataset, batches
from .mask import Mask
from .optim import LrSchedule, OptimizerState, lr_at, make_optimizer, step
from .tensor import LayerSpec, ParamStore, accuracy, loss_and_grad


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss or parameter."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    optimizer: str = "adam"
    lr: float = 1e-3
    weight_decay: float = 0.0
    momentum: float = 0.9
    lr_schedule: str = "constant"
    delta: float = 0.05
    warmup_epochs: int = 0
    seed: int = 0

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr_schedule, self.lr, self.delta, self.epochs, self.warmup_epochs)

    def new_optimizer(self) -> OptimizerState:
        if self.optimizer == "adam":
            return make_optimizer("adam", weight_decay=self.weight_decay)
        return make_optimizer("sgd_momentum", weight_decay=self.weight_decay, momentum=self.momentum)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float
    p: float
    tau: float
    nonzeros: int
    lr: float
    wall_time: float = field(default=0.0, compare=False)


# Called as hook(global_step, params) after every optimizer step.
StepHook = Callable[[int, ParamStore], None]


def train_epoch(params: ParamStore, spec: Sequence[LayerSpec], train: Dataset,
                state: OptimizerState, mask: Mask | None, lr: float, plan: BatchPlan,
                step_hook: StepHook | None = None) -> float:
    """Run one pass of masked optimizer steps; returns the mean batch loss."""
    total = 0.0
    n = 0
    for batch in batches(train, plan):
        loss, grads = loss_and_grad(params, spec, batch.inputs, batch.labels)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss} at epoch {plan.epoch}, step {state.t + 1}")
        step(state, params, grads, mask, lr)
        total += loss
        n += 1
        if step_hook is not None:
            step_hook(state.t, params)
    for e in params:
        if not np.all(np.isfinite(e.tensor)):
            raise NumericalError(f"non-finite values in {e.name} after epoch {plan.epoch}")
    return total / max(n, 1)


def evaluate_split(params: ParamStore, spec: Sequence[LayerSpec], ds: Dataset | None) -> float:
    if ds is None or len(ds) == 0:
        return float("nan")
    return accuracy(params, spec, ds.images, ds.labels)


def train_masked(params: ParamStore, spec: Sequence[LayerSpec], train: Dataset, test: Dataset | None,
                 cfg: TrainConfig, mask: Mask | None = None,
                 on_epoch: Callable[[EpochRecord], None] | None = None,
                 step_hook: StepHook | None = None,
                 shuffle_stream: int = 0) -> list[EpochRecord]:
    """Train ``params`` in place for ``cfg.epochs`` epochs under a fixed mask."""
    state = cfg.new_optimizer()
    sched = cfg.schedule()
    nonzeros = mask.popcount if mask is not None else params.num_prunable
    records = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at(sched, epoch)
        plan = BatchPlan(seed_for(cfg.seed, shuffle_stream), epoch, cfg.batch_size, len(train))
        loss = train_epoch(params, spec, train, state, mask, lr, plan, step_hook)
        rec = EpochRecord(epoch, loss, evaluate_split(params, spec, test), 0.0, 0.0, nonzeros, lr,
                          time.perf_counter() - t0)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return records


def seed_for(seed: int, stream: int) -> int:
    """Derive a shuffle seed for an independent stream of a run."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])
