"""Accuracy metrics, ROC sweeps, and the training-fraction x speech-ratio grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvalError

DEFAULT_FRACTIONS = (0.25, 0.5, 0.75, 1.0)
DEFAULT_RATIOS = (0.2, 0.35, 0.5, 0.65, 0.8)


@dataclass(frozen=True)
class Metrics:
    tp_rate: float
    tn_rate: float
    fp_rate: float
    fn_rate: float
    accuracy: float


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    points: np.ndarray  # (n, 2) columns (fp_rate, tp_rate)
    auc: float


@dataclass(frozen=True)
class ExperimentGrid:
    fractions: tuple = DEFAULT_FRACTIONS
    ratios: tuple = DEFAULT_RATIOS

    def __post_init__(self):
        for v in tuple(self.fractions) + tuple(self.ratios):
            if not 0.0 < v <= 1.0:
                raise EvalError("fractions and ratios must lie in (0, 1]")


@dataclass
class GridResult:
    fractions: tuple
    ratios: tuple
    accuracy: np.ndarray  # (len(fractions), len(ratios))
    test_split_hash: str = ""
    cell_hashes: list = field(default_factory=list)

    def cell(self, fraction, ratio) -> float:
        i = self.fractions.index(fraction)
        j = self.ratios.index(ratio)
        return float(self.accuracy[i, j])


def compute_metrics(predictions: np.ndarray, labels: np.ndarray) -> Metrics:
    """Per-class rates and overall accuracy; requires both classes present."""
    pred = np.asarray(predictions).astype(int)
    lab = np.asarray(labels).astype(int)
    if pred.shape != lab.shape:
        raise EvalError("predictions and labels differ in length")
    if pred.size < 1:
        raise EvalError("empty input")
    n_pos = int(np.sum(lab == 1))
    n_neg = int(np.sum(lab == 0))
    if n_pos == 0 or n_neg == 0:
        raise EvalError("rates undefined: labels contain a single class")
    tp = int(np.sum((pred == 1) & (lab == 1)))
    tn = int(np.sum((pred == 0) & (lab == 0)))
    return Metrics(
        tp_rate=tp / n_pos,
        tn_rate=tn / n_neg,
        fp_rate=(n_neg - tn) / n_neg,
        fn_rate=(n_pos - tp) / n_pos,
        accuracy=(tp + tn) / pred.size,
    )


def roc(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """Threshold sweep over all distinct scores (predict 1 iff score >= t).

    Points are ordered by decreasing threshold, starting at (0, 0) for the
    +inf threshold and ending at (1, 1); AUC by the trapezoid rule.
    """
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels).astype(int)
    if s.shape != lab.shape:
        raise EvalError("scores and labels differ in length")
    n_pos = int(np.sum(lab == 1))
    n_neg = int(np.sum(lab == 0))
    if n_pos == 0 or n_neg == 0:
        raise EvalError("ROC undefined: labels contain a single class")
    order = np.argsort(-s, kind="stable")
    sorted_scores = s[order]
    sorted_labels = lab[order]
    cum_tp = np.cumsum(sorted_labels == 1)
    cum_fp = np.cumsum(sorted_labels == 0)
    # Keep the last index of each distinct score: all ties flip together.
    distinct = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    thresholds = np.concatenate([[np.inf], sorted_scores[distinct]])
    tp_rate = np.concatenate([[0.0], cum_tp[distinct] / n_pos])
    fp_rate = np.concatenate([[0.0], cum_fp[distinct] / n_neg])
    auc = float(np.trapezoid(tp_rate, fp_rate))
    return RocCurve(thresholds=thresholds,
                    points=np.column_stack([fp_rate, tp_rate]),
                    auc=auc)


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,fp,tp\n")
        for t, (fp, tp) in zip(curve.thresholds, curve.points):
            fh.write(f"{t!r},{fp!r},{tp!r}\n")


def write_metrics_csv(metrics: Metrics, path) -> None:
    with open(path, "w") as fh:
        fh.write("tp_rate,tn_rate,fp_rate,fn_rate,accuracy\n")
        fh.write(",".join(repr(v) for v in (
            metrics.tp_rate, metrics.tn_rate, metrics.fp_rate,
            metrics.fn_rate, metrics.accuracy)) + "\n")


def write_grid_csv(result: GridResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("fraction,ratio,accuracy\n")
        for i, f in enumerate(result.fractions):
            for j, r in enumerate(result.ratios):
                fh.write(f"{f!r},{r!r},{result.accuracy[i, j]!r}\n")


def run_grid(dataset, grid: ExperimentGrid, config, seed: int = 0) -> GridResult:
    """Retrain the full pipeline per (fraction, ratio) cell, fixed test split.

    Each cell resamples the hypothesis-training split (seeded per cell) to
    the requested size and speech ratio, retrains both networks and the
    classifiers, and evaluates real-time accuracy on the unchanged test
    split. Cell size is capped by per-class availability so the ratio is
    always exact.
    """
    from . import pipeline  # local import: evaluation sits above the orchestrator

    splits = pipeline.pipeline_splits(dataset, config)
    result = GridResult(fractions=tuple(grid.fractions),
                        ratios=tuple(grid.ratios),
                        accuracy=np.zeros((len(grid.fractions),
                                           len(grid.ratios))))
    result.test_split_hash = pipeline.index_hash(splits.test)
    n_full = splits.ded_train0.size + splits.ded_train1.size
    for i, fraction in enumerate(grid.fractions):
        for j, ratio in enumerate(grid.ratios):
            cell_seed = seed * 1_000_003 + i * 1009 + j
            rng = np.random.default_rng(cell_seed)
            target = int(round(fraction * n_full))
            size = min(target,
                       int(splits.ded_train1.size / ratio),
                       int(splits.ded_train0.size / (1.0 - ratio)))
            n_speech = int(round(size * ratio))
            n_other = size - n_speech
            if min(n_speech, n_other) < 1 or size < 10 * config.batch_size:
                raise EvalError(
                    f"infeasible cell fraction={fraction} ratio={ratio}: "
                    f"{size} rows available")
            pick1 = rng.choice(splits.ded_train1, size=n_speech, replace=False)
            pick0 = rng.choice(splits.ded_train0, size=n_other, replace=False)
            cell_splits = pipeline.Splits(
                ded_train0=np.sort(pick0), ded_train1=np.sort(pick1),
                classifier=splits.classifier, test=splits.test)
            bundle = pipeline.train_from_splits(dataset, cell_splits, config,
                                                seed=cell_seed)
            labels, _ = pipeline.infer_realtime_features(
                dataset.features[splits.test], bundle)
            m = compute_metrics(labels, dataset.labels[splits.test])
            result.accuracy[i, j] = m.accuracy
            result.cell_hashes.append(pipeline.index_hash(splits.test))
    return result
