"""Stratified k-fold evaluation with validation-based grid search."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DatasetBundle, FoldAssignment, stratified_folds
from .trainer import TrainConfig, embed, predict_graphs, train

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_SCALE_COUNTS = (1, 2)


@dataclass(frozen=True)
class HyperGrid:
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    scale_counts: tuple[int, ...] = DEFAULT_SCALE_COUNTS

    def __post_init__(self) -> None:
        if not self.lambdas or not self.scale_counts:
            raise ValueError("grid must be non-empty")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambdas must be non-negative")
        if any(s < 1 for s in self.scale_counts):
            raise ValueError("scale counts must be >= 1")

    @classmethod
    def fast(cls) -> "HyperGrid":
        return cls((0.5,), (2,))

    def points(self) -> list[tuple[float, int]]:
        """Grid points in tie-break order: smallest lambda first, then smallest s."""
        return sorted((float(lam), int(s)) for lam in self.lambdas for s in self.scale_counts)


@dataclass(frozen=True)
class FoldRecord:
    fold: int
    lam: float
    s: int
    test_accuracy: float
    validation_accuracies: tuple[float, ...] = field(default=(), compare=False)


@dataclass
class CvReport:
    per_fold: list[FoldRecord]
    mean_accuracy: float
    std_accuracy: float

    @classmethod
    def from_folds(cls, per_fold: Sequence[FoldRecord]) -> "CvReport":
        accs = np.array([r.test_accuracy for r in per_fold])
        return cls(list(per_fold), float(accs.mean()), float(accs.std()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "lambda", "s", "test_accuracy"])
        for r in self.per_fold:
            w.writerow([r.fold, repr(r.lam), r.s, repr(r.test_accuracy)])
        w.writerow(["mean", "std"])
        w.writerow([repr(self.mean_accuracy), repr(self.std_accuracy)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CvReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["fold", "lambda", "s", "test_accuracy"]:
            raise ValueError("not a cv report")
        try:
            split = rows.index(["mean", "std"])
        except ValueError:
            raise ValueError("cv report lacks the mean,std summary") from None
        per_fold = [FoldRecord(int(f), float(lam), int(s), float(acc)) for f, lam, s, acc in rows[1:split]]
        mean, std = (float(x) for x in rows[split + 1])
        return cls(per_fold, mean, std)


def accuracy(predictions: Sequence[int], truth: Sequence[int]) -> float:
    p, t = np.asarray(predictions), np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError("predictions and truth differ in length")
    if p.size == 0:
        raise ValueError("no predictions")
    return float(np.mean(p == t))


def job_seed(seed: int, fold: int, job: int) -> int:
    """Independent, reproducible seed for one (fold, grid point) training job."""
    return int(np.random.SeedSequence([seed, fold, job]).generate_state(1)[0])


def fit_and_score(
    bundle: DatasetBundle, train_idx: Sequence[int], eval_idx: Sequence[int], config: TrainConfig
) -> float:
    graphs = [bundle.graphs[i] for i in train_idx]
    labels = [bundle.class_labels[i] for i in train_idx]
    params = train(config, graphs, labels, bundle.alphabet_size)
    train_sets = embed(params, graphs, bundle.alphabet_size)
    pred = predict_graphs(params, train_sets, [bundle.graphs[i] for i in eval_idx], bundle.alphabet_size)
    return accuracy(pred, [bundle.class_labels[i] for i in eval_idx])


def run_fold(
    bundle: DatasetBundle,
    folds: FoldAssignment,
    fold_index: int,
    grid: HyperGrid,
    config: TrainConfig,
    seed: int,
) -> FoldRecord:
    """Select (lambda, s) on the validation fold, retrain on all non-test data, score on test."""
    if not 0 <= fold_index < folds.k:
        raise ValueError(f"fold {fold_index} outside [0, {folds.k})")
    train_idx = folds.training_indices(fold_index)
    val_idx = folds.validation_indices(fold_index)
    points = grid.points()
    if len(points) == 1:
        best = 0
        val_accs: tuple[float, ...] = ()
    else:
        accs = []
        for gi, (lam, s) in enumerate(points):
            cfg = replace(config, lam=lam, s=s, seed=job_seed(seed, fold_index, gi))
            accs.append(fit_and_score(bundle, train_idx, val_idx, cfg))
            log.debug("fold %d lambda=%g s=%d validation=%.4f", fold_index, lam, s, accs[-1])
        # first maximum in tie-break order
        best = int(np.argmax(accs))
        val_accs = tuple(accs)
    lam, s = points[best]
    cfg = replace(config, lam=lam, s=s, seed=job_seed(seed, fold_index, len(points)))
    test_acc = fit_and_score(bundle, folds.non_test_indices(fold_index), folds.test_indices(fold_index), cfg)
    log.info("fold %d: lambda=%g s=%d test accuracy %.4f", fold_index, lam, s, test_acc)
    return FoldRecord(fold_index, lam, s, test_acc, val_accs)


def run_cv(
    bundle: DatasetBundle,
    k: int = 10,
    grid: HyperGrid | None = None,
    config: TrainConfig | None = None,
    seed: int = 0,
    jobs: int = 1,
) -> CvReport:
    grid = grid or HyperGrid()
    config = config or TrainConfig()
    folds = stratified_folds(bundle.class_labels, k, seed)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            futures = [pool.submit(run_fold, bundle, folds, f, grid, config, seed) for f in range(k)]
            records = [fut.result() for fut in futures]
    else:
        records = [run_fold(bundle, folds, f, grid, config, seed) for f in range(k)]
    return CvReport.from_folds(records)


def write_report(report: CvReport, path: str | Path) -> None:
    Path(path).write_text(report.to_csv())
