"""End-to-end orchestration: splits, training, and batch/real-time inference.

Training fits one standardizer on the combined hypothesis-training rows,
builds one diffusion embedding and one encoder-decoder per hypothesis, then
trains the two linear classifiers (2-D real-time, 4-D batch) on the held-out
classifier split. Inference either streams frame by frame (reconstruction
errors only, bit-identical to the offline path) or processes a batch with
out-of-sample diffusion targets.
"""

from __future__ import annotations

import hashlib
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import errormap
from .config import (PipelineConfig, config_hash, encoder_dims, mfcc_config,
                     svm_config, train_config)
from .diffusion import extend_many, fit_diffusion_map
from .errors import TrainingError
from .errormap import (BATCH, REALTIME, build_error_map, classify_map,
                       score_map, train_svm)
from .features import (apply_standardizer, compute_mfcc,
                       extract_context_features, fit_standardizer,
                       mel_band_energies, smooth_band_powers)
from .network import forward, train_encoder_decoder
from .scene import AudioSignal, frame_signal


@dataclass(frozen=True)
class SplitSpec:
    ded_train_fraction: float = 0.70
    classifier_fraction: float = 0.15
    test_fraction: float = 0.15
    rng_seed: int = 0

    def __post_init__(self):
        total = (self.ded_train_fraction + self.classifier_fraction
                 + self.test_fraction)
        if abs(total - 1.0) > 1e-9:
            raise TrainingError("split fractions must sum to 1")


@dataclass(frozen=True)
class Splits:
    """Disjoint frame-index sets; hypothesis training is kept per class."""

    ded_train0: np.ndarray
    ded_train1: np.ndarray
    classifier: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Raw (unstandardized) context features plus frame labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise TrainingError("features and labels disagree on row count")


@dataclass
class ModelBundle:
    standardizer: object
    model0: object
    model1: object
    svm_realtime: object
    svm_batch: object
    embedding0: object
    embedding1: object
    config: PipelineConfig
    metadata: dict = field(default_factory=dict)
    format_version: int = 1


def index_hash(indices: np.ndarray) -> str:
    return hashlib.sha256(np.sort(np.asarray(indices, dtype="<i8"))
                          .tobytes()).hexdigest()


def _floor_frac(fraction: float, n: int) -> int:
    return int(fraction * n + 1e-9)


def split_dataset(labels: np.ndarray, spec: SplitSpec) -> Splits:
    """Seeded per-hypothesis 70/15/15 partition into disjoint index sets."""
    labels = np.asarray(labels).astype(int)
    rng = np.random.default_rng(spec.rng_seed)
    per_class = {}
    for hyp in (0, 1):
        idx = np.flatnonzero(labels == hyp)
        if idx.size < 3:
            raise TrainingError(f"too few frames for hypothesis {hyp}")
        perm = rng.permutation(idx.size)
        idx = idx[perm]
        n_ded = _floor_frac(spec.ded_train_fraction, idx.size)
        n_cl = _floor_frac(spec.classifier_fraction, idx.size)
        if min(n_ded, n_cl, idx.size - n_ded - n_cl) < 1:
            raise TrainingError(f"too few frames for hypothesis {hyp}")
        per_class[hyp] = (np.sort(idx[:n_ded]),
                          np.sort(idx[n_ded:n_ded + n_cl]),
                          np.sort(idx[n_ded + n_cl:]))
    return Splits(
        ded_train0=per_class[0][0],
        ded_train1=per_class[1][0],
        classifier=np.sort(np.concatenate([per_class[0][1], per_class[1][1]])),
        test=np.sort(np.concatenate([per_class[0][2], per_class[1][2]])),
    )


def prepare_dataset(noisy: AudioSignal, labels: np.ndarray,
                    config: PipelineConfig) -> Dataset:
    """Frame the signal and run the full feature pipeline."""
    frames = frame_signal(noisy, config.frame_length, config.frame_hop)
    labels = np.asarray(labels).astype(np.int8)
    if labels.shape[0] != frames.n_frames:
        raise TrainingError(
            f"label count {labels.shape[0]} does not match "
            f"frame count {frames.n_frames}")
    features = extract_context_features(frames, mfcc_config(config),
                                        j=config.context_j)
    return Dataset(features=features, labels=labels)


def _batch_targets(x_std: np.ndarray, bundle_or_parts, config: PipelineConfig,
                   per_batch_dm: bool, seed: int):
    """Diffusion targets for batch-mode mapping errors.

    Default: extend each row into both hypothesis embeddings (a pair of
    target arrays). With ``per_batch_dm``: recompute one joint embedding on
    the rows themselves, as the original formulation does.
    """
    embedding0, embedding1 = bundle_or_parts
    if per_batch_dm:
        _, targets = fit_diffusion_map(
            x_std, k=config.knn_k, d=config.embed_dim, seed=seed,
            max_points=config.embed_max_points)
        return targets
    return (extend_many(embedding0, x_std), extend_many(embedding1, x_std))


def train_from_splits(dataset: Dataset, splits: Splits,
                      config: PipelineConfig, seed=None) -> ModelBundle:
    """Train every component against a fixed split assignment."""
    seed = config.seed if seed is None else seed
    train_rows = np.concatenate([splits.ded_train0, splits.ded_train1])
    standardizer = fit_standardizer(dataset.features[train_rows])
    x_std = apply_standardizer(dataset.features, standardizer)

    models, embeddings, reports = {}, {}, {}
    for hyp, rows in ((0, splits.ded_train0), (1, splits.ded_train1)):
        x_h = x_std[rows]
        embedding, targets = fit_diffusion_map(
            x_h, k=config.knn_k, d=config.embed_dim, seed=seed + 10 + hyp,
            max_points=config.embed_max_points)
        model, report = train_encoder_decoder(
            x_h, targets, train_config(config, seed_offset=20 + hyp),
            hypothesis=hyp, encoder_dims=encoder_dims(config))
        models[hyp], embeddings[hyp], reports[hyp] = model, embedding, report

    x_cl = x_std[splits.classifier]
    y_cl = dataset.labels[splits.classifier]
    realtime_map = build_error_map(x_cl, models[0], models[1], REALTIME)
    targets_cl = _batch_targets(x_cl, (embeddings[0], embeddings[1]), config,
                                config.per_batch_dm, seed + 40)
    batch_map = build_error_map(x_cl, models[0], models[1], BATCH, targets_cl)
    svm_cfg = svm_config(config)
    svm_realtime = train_svm(realtime_map, y_cl, svm_cfg)
    svm_batch = train_svm(batch_map, y_cl, svm_cfg)

    metadata = {
        "seed": int(seed),
        "config_hash": config_hash(config),
        "eigenvalues": {str(h): [float(v) for v in embeddings[h].eigenvalues]
                        for h in (0, 1)},
        "train_rows": {str(h): int(len(rows)) for h, rows in
                       ((0, splits.ded_train0), (1, splits.ded_train1))},
        "train_row_labels_pure": {
            "0": bool(np.all(dataset.labels[splits.ded_train0] == 0)),
            "1": bool(np.all(dataset.labels[splits.ded_train1] == 1))},
        "split_hashes": {
            "ded_train0": index_hash(splits.ded_train0),
            "ded_train1": index_hash(splits.ded_train1),
            "classifier": index_hash(splits.classifier),
            "test": index_hash(splits.test)},
        "stop_reasons": {str(h): reports[h].stop_reasons for h in (0, 1)},
    }
    return ModelBundle(standardizer=standardizer, model0=models[0],
                       model1=models[1], svm_realtime=svm_realtime,
                       svm_batch=svm_batch, embedding0=embeddings[0],
                       embedding1=embeddings[1], config=config,
                       metadata=metadata)


def train_pipeline(dataset: Dataset, config: PipelineConfig) -> ModelBundle:
    """Split, then train; the split assignment is derived from config.seed."""
    splits = split_dataset(dataset.labels, SplitSpec(
        ded_train_fraction=config.ded_train_fraction,
        classifier_fraction=config.classifier_fraction,
        test_fraction=config.test_fraction,
        rng_seed=config.seed))
    return train_from_splits(dataset, splits, config)


def pipeline_splits(dataset: Dataset, config: PipelineConfig) -> Splits:
    """The split assignment train_pipeline uses for this dataset/config."""
    return split_dataset(dataset.labels, SplitSpec(
        ded_train_fraction=config.ded_train_fraction,
        classifier_fraction=config.classifier_fraction,
        test_fraction=config.test_fraction,
        rng_seed=config.seed))


# --- inference -------------------------------------------------------------

def _classify_realtime_row(bundle: ModelBundle, raw_row: np.ndarray):
    x = apply_standardizer(raw_row, bundle.standardizer)
    _, r0 = forward(bundle.model0, x)
    _, r1 = forward(bundle.model1, x)
    coord = np.array([errormap.decoder_error(x, r0),
                      errormap.decoder_error(x, r1)])
    s = errormap.score(coord, bundle.svm_realtime)
    return (1 if s > 0.0 else 0), s


def infer_realtime_features(features_raw: np.ndarray, bundle: ModelBundle):
    """Real-time decisions for precomputed raw feature rows."""
    features_raw = np.atleast_2d(features_raw)
    labels = np.empty(features_raw.shape[0], dtype=np.int8)
    scores = np.empty(features_raw.shape[0])
    for i in range(features_raw.shape[0]):
        labels[i], scores[i] = _classify_realtime_row(bundle, features_raw[i])
    return labels, scores


class RealtimeDetector:
    """Frame-by-frame detector with the exact offline feature arithmetic.

    Central-difference deltas (applied twice) and the one-frame context
    window mean a decision for frame n is emitted once frame n+3 arrives;
    ``flush`` finishes the tail with the same edge replication the offline
    path uses, so streamed and offline results are bit-identical.
    """

    def __init__(self, bundle: ModelBundle):
        self._bundle = bundle
        cfg = bundle.config
        self._mfcc_cfg = mfcc_config(cfg)
        self._j = cfg.context_j
        self._band_window = deque(maxlen=cfg.noise_window_frames)
        self._smoothed = None
        self._mfcc, self._delta, self._delta2, self._base = [], [], [], []
        self._emitted = 0

    def process(self, frame: np.ndarray) -> list:
        """Feed one frame; returns decisions that became available."""
        bands = mel_band_energies(frame, self._mfcc_cfg)
        self._smoothed = smooth_band_powers(bands, self._smoothed)
        self._band_window.append(self._smoothed)
        noise = np.maximum(
            self._mfcc_cfg.noise_bias * np.min(np.stack(self._band_window),
                                               axis=0),
            self._mfcc_cfg.log_floor)
        self._mfcc.append(compute_mfcc(frame, noise, self._mfcc_cfg))
        return self._advance(final=False)

    def flush(self) -> list:
        """Finish the stream: emit all pending decisions (edge-replicated)."""
        return self._advance(final=True)

    def _advance(self, final: bool) -> list:
        mfcc, delta, delta2, base = (self._mfcc, self._delta, self._delta2,
                                     self._base)
        n = len(mfcc)
        while len(delta) < n and (len(delta) < n - 1 or final):
            k = len(delta)
            delta.append((mfcc[min(k + 1, n - 1)] - mfcc[max(k - 1, 0)]) / 2.0)
        while len(delta2) < len(delta) and (len(delta2) < len(delta) - 1
                                            or final):
            k = len(delta2)
            hi = min(k + 1, len(delta) - 1)
            delta2.append((delta[hi] - delta[max(k - 1, 0)]) / 2.0)
        while len(base) < len(delta2):
            k = len(base)
            base.append(np.concatenate([mfcc[k], delta[k], delta2[k]]))
        out = []
        while self._emitted < len(base) and (
                self._emitted + self._j < len(base) or final):
            k = self._emitted
            row = np.concatenate([
                base[min(max(k + off, 0), len(base) - 1)]
                for off in range(-self._j, self._j + 1)])
            label, s = _classify_realtime_row(self._bundle, row)
            out.append((k, label, s))
            self._emitted += 1
        return out


def infer_realtime(frames_iterable, bundle: ModelBundle):
    """Generator over (frame_index, label, score) for a frame stream."""
    detector = RealtimeDetector(bundle)
    for frame in frames_iterable:
        yield from detector.process(frame)
    yield from detector.flush()


def infer_realtime_signal(signal: AudioSignal, bundle: ModelBundle):
    """Stream a whole signal; returns (labels, scores) arrays."""
    cfg = bundle.config
    frames = frame_signal(signal, cfg.frame_length, cfg.frame_hop)
    labels = np.empty(frames.n_frames, dtype=np.int8)
    scores = np.empty(frames.n_frames)
    for idx, label, s in infer_realtime(frames.frames, bundle):
        labels[idx] = label
        scores[idx] = s
    return labels, scores


def infer_batch(features_raw: np.ndarray, bundle: ModelBundle,
                per_batch_dm=None):
    """Batch decisions from 4-D error coordinates; returns (labels, scores).

    ``per_batch_dm`` recomputes one joint embedding on the batch itself
    (needs frames from both hypotheses in nontrivial proportion, which
    cannot be verified without labels, hence the warning); the default
    extends rows into the stored per-hypothesis embeddings. Batches below
    the configured minimum fall back to the stored embeddings.
    """
    config = bundle.config
    if per_batch_dm is None:
        per_batch_dm = config.per_batch_dm
    features_raw = np.atleast_2d(features_raw)
    n = features_raw.shape[0]
    if n < config.min_batch_frames:
        warnings.warn(
            f"batch of {n} frames is below min_batch_frames="
            f"{config.min_batch_frames}; out-of-sample extension enforced",
            UserWarning, stacklevel=2)
        per_batch_dm = False
    if per_batch_dm:
        warnings.warn(
            "per-batch embedding assumes the batch mixes both hypotheses "
            "in nontrivial proportion; this cannot be checked without "
            "labels and the embedding degenerates otherwise",
            UserWarning, stacklevel=2)
    x_std = apply_standardizer(features_raw, bundle.standardizer)
    targets = _batch_targets(x_std, (bundle.embedding0, bundle.embedding1),
                             config, per_batch_dm, config.seed + 77)
    emap = build_error_map(x_std, bundle.model0, bundle.model1, BATCH, targets)
    return classify_map(emap, bundle.svm_batch), score_map(emap, bundle.svm_batch)


def infer_batch_signal(signal: AudioSignal, bundle: ModelBundle,
                       per_batch_dm=None):
    cfg = bundle.config
    frames = frame_signal(signal, cfg.frame_length, cfg.frame_hop)
    features = extract_context_features(frames, mfcc_config(cfg),
                                        j=cfg.context_j)
    return infer_batch(features, bundle, per_batch_dm=per_batch_dm)


def write_predictions_csv(labels: np.ndarray, scores: np.ndarray, path):
    with open(path, "w") as fh:
        fh.write("frame_index,label,score\n")
        for i in range(len(labels)):
            fh.write(f"{i},{int(labels[i])},{scores[i]!r}\n")


def read_predictions_csv(path):
    labels, scores = [], []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            line = line.strip()
            if line:
                _, lab, s = line.split(",")
                labels.append(int(lab))
                scores.append(float(s))
    return np.asarray(labels, dtype=np.int8), np.asarray(scores)
