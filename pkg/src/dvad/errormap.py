"""Error maps over the two hypothesis networks and the linear classifier.

Each frame is propagated through both trained networks; the l1 mapping error
(bottleneck vs. diffusion target) and reconstruction error (output vs.
input) form a coordinate: 2-D in real-time mode (reconstruction errors
only), 4-D in batch mode. A soft-margin linear SVM trained on these
coordinates separates the speech-presence and speech-absence regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClassifierError
from .network import forward

REALTIME = "realtime"
BATCH = "batch"
_MODE_DIMS = {REALTIME: 2, BATCH: 4}


@dataclass(frozen=True)
class ErrorMap:
    """Nonnegative error coordinates, one row per frame."""

    mode: str
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in _MODE_DIMS:
            raise ClassifierError(f"unknown mode {self.mode!r}")
        values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        if values.shape[1] != _MODE_DIMS[self.mode]:
            raise ClassifierError(
                f"{self.mode} coordinates must have "
                f"{_MODE_DIMS[self.mode]} components")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ClassifierError("error coordinates must be finite and >= 0")


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray
    bias: float
    mode: str


@dataclass(frozen=True)
class SvmTrainConfig:
    c: float = 1.0
    epochs: int = 200
    rng_seed: int = 0

    def __post_init__(self):
        if self.c <= 0:
            raise ClassifierError("regularization c must be positive")
        if self.epochs < 1:
            raise ClassifierError("epochs must be >= 1")


def encoder_error(target: np.ndarray, predicted: np.ndarray) -> float:
    """l1 distance between the diffusion target and the bottleneck output."""
    return float(np.sum(np.abs(np.asarray(target, dtype=np.float64)
                               - np.asarray(predicted, dtype=np.float64))))


def decoder_error(original: np.ndarray, reconstruction: np.ndarray) -> float:
    """l1 distance between the input vector and its reconstruction."""
    return encoder_error(original, reconstruction)


def build_error_map(features: np.ndarray, model0, model1, mode: str,
                    dm_targets=None) -> ErrorMap:
    """Propagate every row through both networks and collect coordinates.

    Real-time rows are (e_de0, e_de1). Batch rows are
    (e_en0, e_de0, e_en1, e_de1), where each mapping error is measured
    against ``dm_targets``: either one N x 3 array (shared target, as when a
    joint embedding is recomputed on the batch) or a pair of per-hypothesis
    target arrays.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = x.shape[0]
    if mode == BATCH:
        if dm_targets is None:
            raise ClassifierError("batch mode requires diffusion targets")
        if isinstance(dm_targets, (tuple, list)):
            t0, t1 = (np.asarray(t, dtype=np.float64) for t in dm_targets)
        else:
            t0 = t1 = np.asarray(dm_targets, dtype=np.float64)
        if t0.shape[0] != n or t1.shape[0] != n:
            raise ClassifierError("target rows must match feature rows")
        values = np.empty((n, 4))
        for i in range(n):
            m0, r0 = forward(model0, x[i])
            m1, r1 = forward(model1, x[i])
            values[i] = (encoder_error(t0[i], m0), decoder_error(x[i], r0),
                         encoder_error(t1[i], m1), decoder_error(x[i], r1))
        return ErrorMap(BATCH, values)
    if mode == REALTIME:
        values = np.empty((n, 2))
        for i in range(n):
            _, r0 = forward(model0, x[i])
            _, r1 = forward(model1, x[i])
            values[i] = (decoder_error(x[i], r0), decoder_error(x[i], r1))
        return ErrorMap(REALTIME, values)
    raise ClassifierError(f"unknown mode {mode!r}")


def svm_objective(weights, bias, coords, y_signed, sample_weights, c):
    """Soft-margin objective: ||w||^2 / (2C) + weighted mean hinge loss."""
    margins = 1.0 - y_signed * (coords @ weights + bias)
    hinge = np.mean(sample_weights * np.maximum(margins, 0.0))
    return float(np.dot(weights, weights) / (2.0 * c) + hinge)


def _best_bias(scores_wo_bias, y_signed, sample_weights):
    """Exact minimizer over the bias of the piecewise-linear hinge sum."""
    n = y_signed.size
    breakpoints = np.where(y_signed > 0, 1.0 - scores_wo_bias,
                           -1.0 - scores_wo_bias)
    order = np.argsort(breakpoints, kind="stable")
    slope = -float(np.sum(sample_weights[y_signed > 0])) / n
    for idx in order:
        if slope >= 0.0:
            break
        slope += sample_weights[idx] / n
        best = breakpoints[idx]
    else:
        best = breakpoints[order[-1]] if order.size else 0.0
    return float(best)


def train_svm(error_map: ErrorMap, labels: np.ndarray,
              config: SvmTrainConfig = SvmTrainConfig()) -> SvmModel:
    """Deterministic subgradient training of the soft-margin linear SVM.

    Inverse-frequency class weights balance the hinge term. Each epoch takes
    one full-batch subgradient step on the weights with the 1/(C t) schedule
    followed by an exact line search on the (unregularized) bias; the
    best-objective iterate is returned.
    """
    coords = error_map.values
    labels = np.asarray(labels).astype(int)
    n = coords.shape[0]
    if labels.shape[0] != n:
        raise ClassifierError("labels must match coordinate rows")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ClassifierError("both classes must be present to train")
    y = np.where(labels == 1, 1.0, -1.0)
    sample_weights = np.where(labels == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))

    c = config.c
    w = np.zeros(coords.shape[1])
    b = _best_bias(coords @ w, y, sample_weights)
    best = (w.copy(), b, svm_objective(w, b, coords, y, sample_weights, c))
    radius = float(np.sqrt(2.0 * c * best[2])) if best[2] > 0 else 0.0
    for t in range(1, config.epochs + 1):
        margins = 1.0 - y * (coords @ w + b)
        active = margins > 0.0
        grad = w / c - (sample_weights[active] * y[active]) @ coords[active] / n
        w = w - grad / (c * t)
        norm = float(np.linalg.norm(w))
        if radius > 0.0 and norm > radius:
            w *= radius / norm
        b = _best_bias(coords @ w, y, sample_weights)
        obj = svm_objective(w, b, coords, y, sample_weights, c)
        if obj < best[2]:
            best = (w.copy(), b, obj)
    w, b, _ = best
    if not np.any(w):
        raise ClassifierError("degenerate training data: zero weight vector")
    return SvmModel(weights=w, bias=b, mode=error_map.mode)


def score(coord: np.ndarray, svm: SvmModel) -> float:
    """Unnormalized signed distance w . e + b."""
    coord = np.asarray(coord, dtype=np.float64)
    if coord.shape[-1] != svm.weights.size:
        raise ClassifierError("coordinate mode does not match classifier mode")
    return float(np.dot(svm.weights, coord) + svm.bias)


def classify(coord: np.ndarray, svm: SvmModel) -> int:
    """Hypothesis decision: 1 iff the score is strictly positive."""
    return 1 if score(coord, svm) > 0.0 else 0


def score_map(error_map: ErrorMap, svm: SvmModel) -> np.ndarray:
    if error_map.mode != svm.mode:
        raise ClassifierError(
            f"coordinate mode {error_map.mode!r} does not match "
            f"classifier mode {svm.mode!r}")
    return error_map.values @ svm.weights + svm.bias


def classify_map(error_map: ErrorMap, svm: SvmModel) -> np.ndarray:
    return (score_map(error_map, svm) > 0.0).astype(np.int8)


def write_error_map_csv(error_map: ErrorMap, labels, path) -> None:
    """Rows ``frame_index,label,e_en0,e_de0,e_en1,e_de1``; mapping-error
    columns are left empty in real-time mode."""
    v = error_map.values
    with open(path, "w") as fh:
        fh.write("frame_index,label,e_en0,e_de0,e_en1,e_de1\n")
        for i in range(v.shape[0]):
            lab = "" if labels is None else str(int(labels[i]))
            if error_map.mode == BATCH:
                cells = [repr(v[i, j]) for j in range(4)]
            else:
                cells = ["", repr(v[i, 0]), "", repr(v[i, 1])]
            fh.write(f"{i},{lab}," + ",".join(cells) + "\n")
