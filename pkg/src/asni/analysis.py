"""Post-hoc reports over checkpoints: layer sparsity, histograms, sign-pool statistics.

Every report is a list of plain rows that :func:`write_csv` turns into
plot-ready CSV.
"""
from __future__ import annotations

import csv
import io
import sys
from dataclasses import dataclass

import numpy as np

from .amenable import pool_mean
from .harness.checkpoint import Checkpoint

SOURCES = {
    "t1d": "dense-trained",
    "asni1": "asni-sparse",
    "asni2": "amenable-retrained",
    "t1s": "amenable-retrained",
}


@dataclass
class LayerSparsityRow:
    name: str
    total: int
    nonzeros: int
    sparsity: float


def layer_sparsity(ckpt: Checkpoint) -> list[LayerSparsityRow]:
    """Per prunable layer counts from the mask, plus a trailing ``network`` row.

    A checkpoint without a mask reports every layer as fully dense.
    """
    rows = []
    for e in ckpt.params.prunable():
        total = e.tensor.size
        nz = total if ckpt.mask is None else int(np.count_nonzero(ckpt.mask.layer(e.name)))
        rows.append(LayerSparsityRow(e.name, total, nz, 100.0 * (1 - nz / total)))
    total = sum(r.total for r in rows)
    nz = sum(r.nonzeros for r in rows)
    rows.append(LayerSparsityRow("network", total, nz, 100.0 * (1 - nz / total) if total else 0.0))
    return rows


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    scope: str
    source: str
    markers: tuple[float, float] | None = None      # (c_plus, c_minus)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def rows(self) -> list[dict]:
        out = []
        for lo, hi, c, n in zip(self.edges[:-1], self.edges[1:], self.centers, self.counts):
            row = {"scope": self.scope, "source": self.source, "bin_left": float(lo),
                   "bin_right": float(hi), "bin_center": float(c), "count": int(n)}
            if self.markers is not None:
                row["c_plus"], row["c_minus"] = (float(m) for m in self.markers)
            out.append(row)
        return out


def _values(ckpt: Checkpoint, scope: str) -> np.ndarray:
    if scope == "network":
        return ckpt.params.flat_prunable()
    if scope not in ckpt.params or not ckpt.params.entry(scope).prunable:
        raise KeyError(f"unknown layer {scope!r}; choose from "
                       f"{['network'] + [e.name for e in ckpt.params.prunable()]}")
    return ckpt.params[scope].ravel()


def param_histogram(ckpt: Checkpoint, scope: str = "network", bins: int = 100,
                    nonzeros_only: bool = False) -> Histogram:
    if bins < 2:
        raise ValueError("bins must be >= 2")
    values = _values(ckpt, scope).astype(np.float64)
    if nonzeros_only:
        values = values[values != 0]
    counts, edges = np.histogram(values, bins=bins)
    markers = None
    if scope != "network" and ckpt.centroids is not None:
        lc = ckpt.centroids[scope]
        markers = (float(lc.c_plus), float(lc.c_minus))
    source = ckpt.meta.get("source") or SOURCES.get(ckpt.meta.get("variant", ""), "unknown")
    return Histogram(edges, counts, scope, source, markers)


@dataclass
class PoolStats:
    name: str
    pos_mean: float
    pos_std: float
    n_pos: int
    neg_mean: float
    neg_std: float
    n_neg: int
    empty_pool: str     # "", "positive", "negative" or "both"


def _std(pool: np.ndarray) -> float:
    return float(pool.astype(np.float64).std()) if pool.size else 0.0


def bimodality_summary(ckpt: Checkpoint) -> list[PoolStats]:
    """Mean and population std of each layer's positive and negative weights."""
    out = []
    for e in ckpt.params.prunable():
        w = e.tensor
        pos, neg = w[w > 0], w[w < 0]
        empty = [label for label, pool in (("positive", pos), ("negative", neg)) if pool.size == 0]
        flag = "both" if len(empty) == 2 else (empty[0] if empty else "")
        out.append(PoolStats(e.name, float(pool_mean(pos)), _std(pos), int(pos.size),
                             float(pool_mean(neg)), _std(neg), int(neg.size), flag))
    return out


def write_csv(rows, out=None, comment: str | None = None) -> str:
    """Write dataclass or dict rows as CSV to ``out`` (path, stream or stdout)."""
    dict_rows = [r if isinstance(r, dict) else vars(r) for r in rows]
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    if dict_rows:
        writer = csv.DictWriter(buf, fieldnames=list(dict_rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(dict_rows)
    text = buf.getvalue()
    if out is None:
        sys.stdout.write(text)
    elif hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text
