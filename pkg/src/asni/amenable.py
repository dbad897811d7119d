"""Two-level (per layer) quantized initialization of the amenable sparse net."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .mask import Mask
from .tensor import DTYPE, LayerSpec, ParamStore
from .training import EpochRecord, TrainConfig, evaluate_split, train_masked


class DegenerateCentroidWarning(UserWarning):
    """A layer has no positive or no negative surviving weights."""


@dataclass(frozen=True)
class LayerCentroids:
    name: str
    c_plus: np.float32
    c_minus: np.float32
    n_plus: int | None = None    # unknown after loading from a checkpoint
    n_minus: int | None = None


@dataclass
class CentroidSet:
    layers: list[LayerCentroids]

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, name: str) -> LayerCentroids:
        for lc in self.layers:
            if lc.name == name:
                return lc
        raise KeyError(name)

    def values(self) -> np.ndarray:
        """The 2L stored numbers, (c+, c-) per layer."""
        return np.array([[lc.c_plus, lc.c_minus] for lc in self.layers], dtype=DTYPE).reshape(-1)


def pool_mean(values: np.ndarray) -> np.float32:
    """float32 mean accumulated in float64; 0 for an empty pool."""
    if values.size == 0:
        return DTYPE(0)
    return DTYPE(values.astype(np.float64).mean())


def extract_centroids(theta: ParamStore) -> CentroidSet:
    layers = []
    for e in theta.prunable():
        w = e.tensor
        pos = w[w > 0]
        neg = w[w < 0]
        for label, pool in (("positive", pos), ("negative", neg)):
            if pool.size == 0:
                warnings.warn(f"{e.name}: no {label} survivors, centroid set to 0",
                              DegenerateCentroidWarning, stacklevel=2)
        layers.append(LayerCentroids(e.name, pool_mean(pos), pool_mean(neg), int(pos.size), int(neg.size)))
    return CentroidSet(layers)


@dataclass
class AmenableInit:
    params: ParamStore
    mask: Mask
    provenance: str             # "centroid" | "original"


def _check_support(theta: ParamStore, mask: Mask) -> None:
    mask.check_compatible(theta)
    support = theta.flat_prunable() != 0
    if not np.array_equal(support, mask.bits):
        extra = int(np.count_nonzero(support & ~mask.bits))
        missing = int(np.count_nonzero(~support & mask.bits))
        raise ValueError(f"support mismatch: {extra} nonzeros outside the mask, "
                         f"{missing} zeros inside it")


def build_init(centroids: CentroidSet, theta: ParamStore, mask: Mask) -> AmenableInit:
    """Replace every surviving weight by its layer's centroid of the same sign."""
    _check_support(theta, mask)
    out = theta.zeros_like()
    for e in theta.prunable():
        lc = centroids[e.name]
        w = e.tensor
        init = np.zeros_like(w)
        init[w > 0] = lc.c_plus
        init[w < 0] = lc.c_minus
        out[e.name] = init
    return AmenableInit(out, mask.copy(), "centroid")


def build_original_init(theta_orig: ParamStore, mask: Mask) -> AmenableInit:
    mask.check_compatible(theta_orig)
    out = theta_orig.copy()
    mask.apply(out)
    return AmenableInit(out, mask.copy(), "original")


def retrain_amenable(init: AmenableInit, spec: Sequence[LayerSpec], data: tuple[Dataset, Dataset | None],
                     cfg: TrainConfig,
                     on_epoch: Callable[[EpochRecord], None] | None = None,
                     ) -> tuple[ParamStore, float, list[EpochRecord]]:
    """Train the fixed-mask network from ``init``; returns (params, test accuracy, records)."""
    train, test = data
    params = init.params.copy()
    records = train_masked(params, spec, train, test, cfg, init.mask, on_epoch=on_epoch)
    return params, evaluate_split(params, spec, test), records
