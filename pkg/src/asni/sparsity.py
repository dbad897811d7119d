"""Sigmoid-scheduled global magnitude pruning and lottery-ticket baselines."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import BatchPlan, Dataset
from .mask import Mask, layout
from .optim import lr_at
from .tensor import LayerSpec, ParamStore
from .training import EpochRecord, TrainConfig, evaluate_split, seed_for, train_epoch, train_masked


@dataclass(frozen=True)
class SparsitySchedule:
    alpha: float                # final-sparsity control, percent
    epochs: int
    beta: float = 0.5
    gamma: float | None = None  # defaults to epochs / 10

    def __post_init__(self):
        if not 0 < self.alpha < 100:
            raise ValueError(f"alpha must lie in (0, 100), got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.gamma is None:
            object.__setattr__(self, "gamma", self.epochs / 10)
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


def sparsity_at(schedule: SparsitySchedule, e: int) -> float:
    """Target global sparsity (percent) after epoch ``e``."""
    z = (e - schedule.beta * schedule.epochs) / schedule.gamma
    return schedule.alpha / (1.0 + math.exp(-z))


@dataclass
class PruneEvent:
    epoch: int
    p: float
    tau: float
    nonzeros_total: int
    nonzeros_per_layer: list[int] = field(default_factory=list)


def prune_count(p: float, n: int) -> int:
    """Number of coordinates removed when pruning ``p`` percent of ``n`` (half rounds up)."""
    return int(math.floor(p / 100.0 * n + 0.5))


def _k_smallest(mags: np.ndarray, k: int, prefer: np.ndarray | None = None) -> np.ndarray:
    # order: magnitude, then coordinates flagged in ``prefer`` first, then index
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    if prefer is None:
        order = np.argsort(mags, kind="stable")
    else:
        order = np.lexsort((~prefer, mags))
    return order[:k]


def global_prune(params: ParamStore, p: float, previous: Mask | None = None,
                 epoch: int = 0) -> tuple[Mask, PruneEvent]:
    """Mask the ``round(p/100 * d)`` smallest-magnitude prunable coordinates.

    The pool holds every prunable coordinate, zeros included.  Ties are broken
    by flat index, except that coordinates already masked in ``previous`` are
    taken before unmasked coordinates of equal magnitude, which keeps the
    support from regrowing.  ``params`` is not modified.
    """
    if not 0 <= p < 100:
        raise ValueError(f"prune percentage {p} outside [0, 100)")
    mags = np.abs(params.flat_prunable())
    d = mags.size
    k = prune_count(p, d)
    prefer = None if previous is None else ~previous.bits
    idx = _k_smallest(mags, k, prefer)
    bits = np.ones(d, dtype=bool)
    bits[idx] = False
    tau = float(mags[idx].max()) if k else 0.0
    names, offsets, shapes = layout(params)
    mask = Mask(bits, names, offsets, shapes)
    event = PruneEvent(epoch, p, tau, mask.popcount, mask.per_layer_counts())
    return mask, event


def asni_one_round(params: ParamStore, spec: Sequence[LayerSpec], data: tuple[Dataset, Dataset | None],
                   cfg: TrainConfig, schedule: SparsitySchedule,
                   on_epoch: Callable[[EpochRecord], None] | None = None,
                   ) -> tuple[ParamStore, Mask, list[PruneEvent]]:
    """Train once from ``params`` (in place), pruning globally after every epoch.

    Returns the epoch-E sparse parameters, the final mask and one
    :class:`PruneEvent` per epoch.
    """
    if schedule.epochs != cfg.epochs:
        raise ValueError(f"schedule covers {schedule.epochs} epochs, training runs {cfg.epochs}")
    train, test = data
    mask = Mask.ones(params)
    state = cfg.new_optimizer()
    lr_sched = cfg.schedule()
    events = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at(lr_sched, epoch)
        plan = BatchPlan(seed_for(cfg.seed, 0), epoch, cfg.batch_size, len(train))
        loss = train_epoch(params, spec, train, state, mask, lr, plan)
        p = sparsity_at(schedule, epoch)
        mask, event = global_prune(params, p, previous=mask, epoch=epoch)
        mask.apply(params)
        events.append(event)
        if on_epoch is not None:
            on_epoch(EpochRecord(epoch, loss, evaluate_split(params, spec, test), p, event.tau,
                                 event.nonzeros_total, lr, time.perf_counter() - t0))
    return params, mask, events


# ---------------------------------------------------------------------------
# lottery-ticket baselines
# ---------------------------------------------------------------------------

@dataclass
class LtaResult:
    mask: Mask
    accuracies: list[float]
    nonzeros: list[int]
    params: ParamStore          # rewound initialization for the next round


def _prune_nonzero(params: ParamStore, mask: Mask, p_round: float) -> Mask:
    # pool is the current support only
    mags = np.abs(params.flat_prunable())
    support = np.flatnonzero(mask.bits)
    k = prune_count(p_round, support.size)
    drop = support[_k_smallest(mags[support], k)]
    bits = mask.bits.copy()
    bits[drop] = False
    return Mask(bits, list(mask.names), list(mask.offsets), list(mask.shapes))


def _rewind(target: ParamStore, mask: Mask) -> ParamStore:
    out = target.copy()
    mask.apply(out)
    return out


def _lottery(params0: ParamStore, spec, data, cfg: TrainConfig, p_round: float, rounds: int,
             rewind_step: int | None,
             on_round: Callable[[int, ParamStore, Mask], None] | None) -> LtaResult:
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not 0 <= p_round < 100:
        raise ValueError(f"p_round {p_round} outside [0, 100)")
    train, test = data
    total_steps = cfg.epochs * (len(train) // cfg.batch_size)
    if rewind_step is not None and not 1 <= rewind_step <= total_steps:
        raise ValueError(f"rewind step {rewind_step} outside [1, {total_steps}]")
    original = params0.copy()
    mask = Mask.ones(params0)
    theta = params0.copy()
    snapshot: dict[str, ParamStore] = {}
    accuracies, nonzeros = [], [mask.popcount]
    for r in range(1, rounds + 1):
        hook = None
        if rewind_step is not None and r == 1:
            def hook(t, p, _k=rewind_step):
                if t == _k:
                    snapshot["k"] = p.copy()
        train_masked(theta, spec, train, test, cfg, mask, step_hook=hook)
        accuracies.append(evaluate_split(theta, spec, test))
        mask = _prune_nonzero(theta, mask, p_round)
        nonzeros.append(mask.popcount)
        target = snapshot["k"] if rewind_step is not None else original
        theta = _rewind(target, mask)
        if on_round is not None:
            on_round(r, theta, mask)
    return LtaResult(mask, accuracies, nonzeros, theta)


def lta(params0: ParamStore, spec: Sequence[LayerSpec], data, cfg: TrainConfig,
        p_round: float, rounds: int,
        on_round: Callable[[int, ParamStore, Mask], None] | None = None) -> LtaResult:
    """Iterative magnitude pruning, rewinding survivors to the original init."""
    return _lottery(params0, spec, data, cfg, p_round, rounds, None, on_round)


def stabilized_lta(params0: ParamStore, spec: Sequence[LayerSpec], data, cfg: TrainConfig,
                   p_round: float, rounds: int, k: int,
                   on_round: Callable[[int, ParamStore, Mask], None] | None = None) -> LtaResult:
    """Like :func:`lta`, but survivors rewind to the snapshot taken after step ``k`` of round 1."""
    return _lottery(params0, spec, data, cfg, p_round, rounds, k, on_round)
