"""Command line entry point: ``asni run | evaluate | report | preset``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .. import analysis
from ..architectures import count_params, get_spec
from ..data import DataError, load_dataset
from ..training import NumericalError
from .checkpoint import CheckpointError, load_checkpoint
from .config import PRESETS, REFERENCE_RESULTS, ConfigError, from_preset, load_config, with_overrides
from .runner import evaluate, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asni", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train the requested variants")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--combo", type=int, help="preset number (1-7)")
    src.add_argument("--config", help="config file of 'section.key = value' lines")
    run.add_argument("--variants", default=None,
                     help="comma list of t1d,asni1,asni2,t1s or 'all'")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--seeds", type=_seeds, default=None, help="e.g. 1,2,3,4,5 or 1..5")
    run.add_argument("--data-dir", default=None)
    run.add_argument("--out-dir", default=None)
    run.add_argument("--epochs", type=int, default=None)
    run.add_argument("--alpha", type=float, default=None)
    run.add_argument("--gamma", type=float, default=None)
    run.add_argument("--train-limit", type=int, default=None,
                     help="use only the first N training samples")
    run.add_argument("--test-limit", type=int, default=None)

    ev = sub.add_parser("evaluate", help="top-1 accuracy of a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--data-dir", required=True)
    ev.add_argument("--dataset", default=None, help="defaults to the dataset in the checkpoint")

    rep = sub.add_parser("report", help="layer sparsity, histogram or sign-pool CSV")
    rep.add_argument("checkpoint")
    rep.add_argument("--layer", default=None, help="layer name or 'network' for a histogram")
    rep.add_argument("--bins", type=int, default=100)
    rep.add_argument("--nonzeros-only", action="store_true")
    rep.add_argument("--bimodality", action="store_true", help="per-layer sign-pool statistics")
    rep.add_argument("--out", default=None)

    pre = sub.add_parser("preset", help="print the resolved fields of a preset")
    pre.add_argument("combo", type=int)
    return parser


def _cmd_run(args) -> int:
    overrides = dict(variants=args.variants, seed=args.seed, seeds=args.seeds, data_dir=args.data_dir,
                     out_dir=args.out_dir, epochs=args.epochs, alpha=args.alpha, gamma=args.gamma,
                     train_limit=args.train_limit, test_limit=args.test_limit)
    if args.combo is not None:
        cfg = with_overrides(from_preset(args.combo), **overrides)
    else:
        cfg = with_overrides(load_config(args.config), **overrides)
    run_experiment(cfg)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = args.dataset or ckpt.config.get("dataset", "mnist")
    _, test = load_dataset(dataset, args.data_dir)
    acc = evaluate(ckpt, test)
    print(f"top1={100 * acc:.2f}%")
    return EXIT_OK


def _cmd_report(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.bimodality:
        analysis.write_csv(analysis.bimodality_summary(ckpt), args.out,
                           comment="std: population (divisor n)")
    elif args.layer is not None:
        try:
            hist = analysis.param_histogram(ckpt, args.layer, args.bins, args.nonzeros_only)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        analysis.write_csv(hist.rows(), args.out)
    else:
        analysis.write_csv(analysis.layer_sparsity(ckpt), args.out)
    return EXIT_OK


def _cmd_preset(args) -> int:
    cfg = from_preset(args.combo)
    p = PRESETS[args.combo]
    spec = get_spec(cfg.arch, cfg.dataset)
    ref = REFERENCE_RESULTS[args.combo]
    print(f"combo={p.combo} dataset={p.dataset} network={p.arch} params={count_params(spec)} "
          f"E={cfg.epochs} B={cfg.batch_size} LR={cfg.lr:g} iters={p.iters} "
          f"alpha={cfg.alpha:g} beta={cfg.beta:g} gamma={cfg.gamma:g} "
          f"reference_sparsity={ref['sparsity']} reference_nonzeros={ref['nonzeros']}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "evaluate": _cmd_evaluate, "report": _cmd_report, "preset": _cmd_preset}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
