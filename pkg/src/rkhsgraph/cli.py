"""Command line entry point: ``rkhsgraph info|train|cv|meanmap``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .data import DatasetError, dataset_stats, parse_tu_dataset, stats_csv
from .harness import HyperGrid, run_cv, write_report
from .kernel import mean_map_grid
from .trainer import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    predict_graphs,
    save_checkpoint,
    train,
    write_curve,
)

log = logging.getLogger("rkhsgraph")


def _cmd_info(args: argparse.Namespace) -> None:
    stats = [dataset_stats(parse_tu_dataset(args.directory, name)) for name in args.names]
    sys.stdout.write(stats_csv(stats))


def _train_config(args: argparse.Namespace, **overrides) -> TrainConfig:
    kw = dict(epochs=args.epochs, learning_rate=args.lr, hidden_dim=args.hidden_dim, seed=args.seed)
    kw.update(overrides)
    return TrainConfig(**kw)


def _cmd_train(args: argparse.Namespace) -> None:
    bundle = parse_tu_dataset(args.directory, args.name)
    config = _train_config(args, lam=args.lam, s=args.s)
    history = []
    params = train(config, bundle.graphs, bundle.class_labels, bundle.alphabet_size, history=history)
    ckpt = Checkpoint(params, config, bundle.alphabet_size, list(bundle.graphs), list(bundle.class_labels),
                      {"dataset": args.name})
    if args.checkpoint:
        save_checkpoint(ckpt, args.checkpoint)
    if args.curve:
        write_curve(history, args.curve)
    pred = predict_graphs(params, ckpt.train_sets(), bundle.graphs, bundle.alphabet_size)
    acc = float(np.mean(pred == np.asarray(bundle.class_labels)))
    print(f"final objective {history[-1].objective:.6g}  training accuracy {acc:.4f}")


def _cmd_cv(args: argparse.Namespace) -> None:
    bundle = parse_tu_dataset(args.directory, args.name)
    grid = HyperGrid.fast() if args.fast else HyperGrid()
    report = run_cv(bundle, args.k, grid, _train_config(args), args.seed, args.jobs)
    if args.out:
        write_report(report, args.out)
    else:
        sys.stdout.write(report.to_csv())
    print(f"mean accuracy {report.mean_accuracy:.4f} +- {report.std_accuracy:.4f}", file=sys.stderr)


def _cmd_meanmap(args: argparse.Namespace) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    if not 0 <= args.graph_index < len(ckpt.graphs):
        raise ValueError(f"graph index {args.graph_index} outside [0, {len(ckpt.graphs)})")
    X = ckpt.train_sets()[args.graph_index]
    sigma = args.sigma if args.sigma is not None else float(ckpt.params.scales.sigmas[0])
    i, j = args.dims
    m = X.shape[1]
    if not (0 <= i < m and 0 <= j < m and i != j):
        raise ValueError(f"dims must be two distinct coordinates in [0, {m})")
    axis = np.linspace(args.grid_min, args.grid_max, args.grid_steps)
    xs, ys = np.meshgrid(axis, axis, indexing="ij")
    # coordinates outside the plotted plane sit at the set's centroid
    grid = np.tile(X.mean(axis=0), (xs.size, 1))
    grid[:, i] = xs.ravel()
    grid[:, j] = ys.ravel()
    values = mean_map_grid(X, sigma, grid)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value"])
        for x, y, v in zip(xs.ravel(), ys.ravel(), values):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--hidden-dim", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rkhsgraph", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("info", help="dataset statistics as CSV")
    p.add_argument("directory")
    p.add_argument("names", nargs="+", metavar="name")
    p.set_defaults(func=_cmd_info)

    p = sub.add_parser("train", help="train on a whole dataset")
    p.add_argument("directory")
    p.add_argument("name")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--s", type=int, default=2)
    _add_train_options(p)
    p.add_argument("--checkpoint")
    p.add_argument("--curve", help="write epoch,objective,train_accuracy CSV here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("directory")
    p.add_argument("name")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--fast", action="store_true", help="single grid point lambda=0.5, s=2")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_options(p)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("meanmap", help="evaluate a graph's mean map on a 2-D grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph-index", type=int, required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--grid-min", type=float, default=-1.0)
    p.add_argument("--grid-max", type=float, default=1.0)
    p.add_argument("--grid-steps", type=int, default=50)
    p.add_argument("--dims", type=int, nargs=2, default=(0, 1), metavar=("I", "J"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_meanmap)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (DatasetError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
