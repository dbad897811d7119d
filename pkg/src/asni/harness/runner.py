"""Orchestrates the four variants of an experiment and writes run artifacts.

Per seed, ``<out_dir>/seed_<s>/<variant>/`` receives ``metrics.csv``
(deterministic), ``timing.csv`` (wall clock) and ``final.ckpt``; the centroid
variant also writes ``init.ckpt``.  ``<out_dir>/summary.csv`` holds one row
per (seed, variant).
"""
from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path

from ..amenable import build_init, build_original_init, extract_centroids, retrain_amenable
from ..architectures import INPUT_SHAPES, get_spec
from ..data import Dataset, load_dataset
from ..sparsity import asni_one_round
from ..tensor import accuracy, build_network
from ..training import EpochRecord, evaluate_split, train_masked
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import VARIANTS, ExperimentConfig

log = logging.getLogger(__name__)

METRICS_FIELDS = ("epoch", "train_loss", "test_accuracy", "p", "tau", "nonzeros", "lr")


@dataclass
class VariantSummary:
    seed: int
    variant: str
    test_accuracy: float
    sparsity: float
    nonzeros: int


class MetricsWriter:
    def __init__(self, directory: Path):
        directory.mkdir(parents=True, exist_ok=True)
        self._metrics = open(directory / "metrics.csv", "w", encoding="utf-8", newline="")
        self._timing = open(directory / "timing.csv", "w", encoding="utf-8", newline="")
        self._m = csv.writer(self._metrics, lineterminator="\n")
        self._t = csv.writer(self._timing, lineterminator="\n")
        self._m.writerow(METRICS_FIELDS)
        self._t.writerow(("epoch", "wall_time"))

    def __call__(self, rec: EpochRecord) -> None:
        self._m.writerow([rec.epoch, repr(rec.train_loss), repr(rec.test_accuracy), repr(rec.p),
                          repr(rec.tau), rec.nonzeros, repr(rec.lr)])
        self._t.writerow([rec.epoch, f"{rec.wall_time:.3f}"])
        self._metrics.flush()
        self._timing.flush()
        log.info("epoch %d loss %.4f acc %.4f p %.3f nz %d", rec.epoch, rec.train_loss,
                 rec.test_accuracy, rec.p, rec.nonzeros)

    def close(self) -> None:
        self._metrics.close()
        self._timing.close()


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    train, test = load_dataset(cfg.dataset, cfg.data_dir)
    if cfg.train_limit:
        train = train.subset(cfg.train_limit)
    if cfg.test_limit:
        test = test.subset(cfg.test_limit)
    return train, test


def _ordered(variants) -> list[str]:
    return [v for v in VARIANTS if v in variants]


def run_seed(cfg: ExperimentConfig, seed: int, data: tuple[Dataset, Dataset]) -> list[VariantSummary]:
    out = Path(cfg.out_dir) / f"seed_{seed}"
    spec = get_spec(cfg.arch, cfg.dataset)
    input_shape = INPUT_SHAPES[cfg.dataset]
    tcfg = cfg.train_config(seed)
    # paths are left out so artifacts do not depend on where they were written
    echo = {k: v for k, v in cfg.to_dict().items() if k not in ("data_dir", "out_dir")}
    requested = _ordered(cfg.variants)
    summaries = []

    def checkpoint(params, variant, mask=None, centroids=None, **meta):
        return Checkpoint(params, spec, input_shape, mask, centroids, echo,
                          {"variant": variant, **meta}, seed)

    def finish(variant, params, mask, ckpt):
        save_checkpoint(out / variant / "final.ckpt", ckpt)
        acc = evaluate_split(params, spec, data[1])
        d = params.num_prunable
        nz = mask.popcount if mask is not None else d
        s = VariantSummary(seed, variant, acc, 100.0 * (1 - nz / d), nz)
        summaries.append(s)
        print(f"seed={seed} variant={variant} top1={100 * acc:.2f}% "
              f"sparsity={s.sparsity:.2f}% nonzeros={nz}", flush=True)

    if "t1d" in requested:
        params = build_network(spec, seed, input_shape)
        writer = MetricsWriter(out / "t1d")
        try:
            train_masked(params, spec, data[0], data[1], tcfg, None, on_epoch=writer)
        finally:
            writer.close()
        finish("t1d", params, None, checkpoint(params, "t1d", source="dense-trained"))

    needs_sparse = any(v in requested for v in ("asni1", "asni2", "t1s"))
    if not needs_sparse:
        return summaries

    params = build_network(spec, seed, input_shape)
    writer = MetricsWriter(out / "asni1")
    try:
        theta_star, mask, events = asni_one_round(params, spec, data, tcfg, cfg.sparsity_schedule(),
                                                   on_epoch=writer)
    finally:
        writer.close()
    final_tau = events[-1].tau
    finish("asni1", theta_star, mask,
           checkpoint(theta_star, "asni1", mask, source="asni-sparse", final_tau=final_tau))

    if "asni2" in requested:
        centroids = extract_centroids(theta_star)
        init = build_init(centroids, theta_star, mask)
        save_checkpoint(out / "asni2" / "init.ckpt",
                        checkpoint(init.params, "asni2", mask, centroids, source="centroid-init"))
        _retrain("asni2", init, spec, data, tcfg, out, finish, checkpoint, centroids)

    if "t1s" in requested:
        original = build_network(spec, seed, input_shape)
        init = build_original_init(original, mask)
        _retrain("t1s", init, spec, data, tcfg, out, finish, checkpoint, None)
    return summaries


def _retrain(variant, init, spec, data, tcfg, out, finish, checkpoint, centroids):
    writer = MetricsWriter(out / variant)
    try:
        params, _, _ = retrain_amenable(init, spec, data, tcfg, on_epoch=writer)
    finally:
        writer.close()
    finish(variant, params, init.mask,
           checkpoint(params, variant, init.mask, centroids, source="amenable-retrained",
                      provenance=init.provenance))


def run_experiment(cfg: ExperimentConfig, data: tuple[Dataset, Dataset] | None = None) -> list[VariantSummary]:
    if data is None:
        data = load_data(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for seed in cfg.run_seeds:
        summaries += run_seed(cfg, seed, data)
    _write_summary(out / "summary.csv", summaries)
    if len(cfg.run_seeds) > 1:
        _write_aggregate(out / "summary_mean.csv", summaries)
    return summaries


def _write_summary(path: Path, rows: list[VariantSummary]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("seed", "variant", "test_accuracy", "sparsity", "nonzeros"))
        for r in rows:
            w.writerow((r.seed, r.variant, repr(r.test_accuracy), repr(r.sparsity), r.nonzeros))


def _write_aggregate(path: Path, rows: list[VariantSummary]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("variant", "n", "acc_mean", "acc_std", "sparsity_mean", "sparsity_std"))
        for v in VARIANTS:
            sel = [r for r in rows if r.variant == v]
            if not sel:
                continue
            acc = [r.test_accuracy for r in sel]
            sp = [r.sparsity for r in sel]
            w.writerow((v, len(sel), repr(statistics.fmean(acc)), repr(statistics.pstdev(acc)),
                        repr(statistics.fmean(sp)), repr(statistics.pstdev(sp))))
            print(f"variant={v} top1={100 * statistics.fmean(acc):.2f}±{100 * statistics.pstdev(acc):.2f}% "
                  f"over {len(sel)} seeds", flush=True)


def evaluate(ckpt: Checkpoint | str | Path, dataset: Dataset) -> float:
    """Top-1 accuracy of a checkpoint on ``dataset``."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    if tuple(dataset.images.shape[1:]) != tuple(ckpt.input_shape):
        raise ValueError(f"checkpoint expects inputs {tuple(ckpt.input_shape)}, "
                         f"dataset has {tuple(dataset.images.shape[1:])}")
    return accuracy(ckpt.params, ckpt.spec, dataset.images, dataset.labels)
