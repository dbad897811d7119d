"""Binary mask over the flattened prunable parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ParamStore


@dataclass
class Mask:
    bits: np.ndarray                  # bool, length d
    names: list[str]                  # prunable tensor names, flattening order
    offsets: list[int]                # start offset of each tensor in ``bits``
    shapes: list[tuple[int, ...]]

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        expected = sum(int(np.prod(s)) for s in self.shapes)
        if self.bits.shape != (expected,):
            raise ValueError(f"mask length {self.bits.size} != {expected}")

    @classmethod
    def ones(cls, params: ParamStore) -> "Mask":
        names, offsets, shapes = layout(params)
        d = sum(int(np.prod(s)) for s in shapes)
        return cls(np.ones(d, dtype=bool), names, offsets, shapes)

    @classmethod
    def from_support(cls, params: ParamStore) -> "Mask":
        """Mask whose ones are exactly the nonzero prunable entries."""
        names, offsets, shapes = layout(params)
        return cls(params.flat_prunable() != 0, names, offsets, shapes)

    def __len__(self) -> int:
        return self.bits.size

    @property
    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def sparsity(self) -> float:
        """Percentage of masked (zero) coordinates."""
        return 100.0 * (1.0 - self.popcount / len(self)) if len(self) else 0.0

    def layer(self, name: str) -> np.ndarray:
        i = self.names.index(name)
        start = self.offsets[i]
        size = int(np.prod(self.shapes[i]))
        return self.bits[start:start + size].reshape(self.shapes[i])

    def per_layer_counts(self) -> list[int]:
        return [int(np.count_nonzero(self.layer(n))) for n in self.names]

    def tensor_masks(self) -> dict[str, np.ndarray]:
        return {n: self.layer(n) for n in self.names}

    def apply(self, params: ParamStore) -> None:
        """Zero every masked coordinate of ``params`` in place."""
        self.check_compatible(params)
        for name in self.names:
            t = params[name]
            t[~self.layer(name)] = 0

    def check_compatible(self, params: ParamStore) -> None:
        names, _, shapes = layout(params)
        if names != self.names or shapes != self.shapes:
            raise ValueError("mask layout does not match parameter store")

    def issubset(self, other: "Mask") -> bool:
        return bool(np.all(other.bits[self.bits]))

    def copy(self) -> "Mask":
        return Mask(self.bits.copy(), list(self.names), list(self.offsets), list(self.shapes))


def layout(params: ParamStore) -> tuple[list[str], list[int], list[tuple[int, ...]]]:
    names, offsets, shapes = [], [], []
    off = 0
    for e in params.prunable():
        names.append(e.name)
        offsets.append(off)
        shapes.append(tuple(e.tensor.shape))
        off += e.tensor.size
    return names, offsets, shapes
