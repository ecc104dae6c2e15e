"""Command-line surface: mix, features, train, infer, evaluate, roc, grid.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import bundle as bundle_io
from . import evaluation, pipeline, scene
from .config import (PipelineConfig, config_hash, load_config, scene_spec,
                     serialize_config)
from .errors import BundleError, ConfigError, DvadError
from .features import extract_context_features, write_features_csv
from .config import mfcc_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="dvad", description=__doc__)
    parser.add_argument("--config", help="pipeline configuration file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--per-batch-dm", action="store_true",
                        help="recompute a joint embedding per batch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="synthesize a labeled noisy scene")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("features", help="dump context features as CSV")
    p.add_argument("--audio", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model bundle")
    p.add_argument("--audio", help="noisy WAV (omit to mix the config scene)")
    p.add_argument("--labels", help="frame labels CSV (required with --audio)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="classify frames of a WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--mode", choices=("realtime", "batch"), default="realtime")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="metrics from predictions + labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("roc", help="threshold sweep from prediction scores")
    p.add_argument("--pred", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("grid", help="training-fraction x speech-ratio grid")
    p.add_argument("--audio", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    return parser


def _load_pipeline_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.per_batch_dm:
        overrides["per_batch_dm"] = True
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _dataset_from_files(audio_path, labels_path, config) -> pipeline.Dataset:
    signal = scene.load_audio(audio_path, expected_rate=config.sample_rate)
    labels = scene.read_labels_csv(labels_path)
    return pipeline.prepare_dataset(signal, labels, config)


def _cmd_mix(args, config):
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    result = scene.mix_scene(scene_spec(config))
    scene.save_audio(result.noisy, os.path.join(args.out_dir, "noisy.wav"))
    scene.save_audio(result.clean, os.path.join(args.out_dir, "clean.wav"))
    scene.write_labels_csv(result.labels,
                           os.path.join(args.out_dir, "labels.csv"))
    print(f"wrote noisy.wav, clean.wav, labels.csv to {args.out_dir} "
          f"({result.labels.size} frames, "
          f"{int(np.sum(result.labels))} speech)")
    return EXIT_OK


def _cmd_features(args, config):
    signal = scene.load_audio(args.audio, expected_rate=config.sample_rate)
    frames = scene.frame_signal(signal, config.frame_length, config.frame_hop)
    features = extract_context_features(frames, mfcc_config(config),
                                        j=config.context_j)
    labels = scene.read_labels_csv(args.labels) if args.labels else None
    write_features_csv(features, args.out, labels=labels)
    print(f"wrote {features.shape[0]} x {features.shape[1]} features to {args.out}")
    return EXIT_OK


def _cmd_train(args, config):
    if args.audio:
        if not args.labels:
            raise ConfigError("--labels is required with --audio")
        dataset = _dataset_from_files(args.audio, args.labels, config)
    else:
        result = scene.mix_scene(scene_spec(config))
        dataset = pipeline.prepare_dataset(result.noisy, result.labels, config)
    bundle = pipeline.train_pipeline(dataset, config)
    bundle_io.save_bundle(bundle, args.out)
    meta_lines = [
        f"config_hash = {config_hash(config)}",
        f"seed = {config.seed}",
        f"format_version = {bundle.format_version}",
    ]
    for hyp in ("0", "1"):
        eigs = ",".join(f"{v:.6f}" for v in bundle.metadata["eigenvalues"][hyp])
        meta_lines.append(f"eigenvalues_{hyp} = {eigs}")
    meta_path = str(args.out) + ".meta"
    with open(meta_path, "w") as fh:
        fh.write("\n".join(meta_lines) + "\n")
    print(f"wrote bundle to {args.out} (metadata: {meta_path})")
    return EXIT_OK


def _cmd_infer(args, config):
    bundle = bundle_io.load_bundle(args.model)
    signal = scene.load_audio(args.audio,
                              expected_rate=bundle.config.sample_rate)
    if args.mode == "realtime":
        labels, scores = pipeline.infer_realtime_signal(signal, bundle)
    else:
        per_batch = True if args.per_batch_dm else None
        labels, scores = pipeline.infer_batch_signal(signal, bundle,
                                                     per_batch_dm=per_batch)
    pipeline.write_predictions_csv(labels, scores, args.out)
    print(f"wrote {labels.size} predictions to {args.out} "
          f"({int(np.sum(labels))} speech frames)")
    return EXIT_OK


def _cmd_evaluate(args, config):
    pred, _ = pipeline.read_predictions_csv(args.pred)
    labels = scene.read_labels_csv(args.labels)
    metrics = evaluation.compute_metrics(pred, labels)
    evaluation.write_metrics_csv(metrics, args.out)
    print(f"accuracy = {metrics.accuracy:.4f} "
          f"(tp_rate {metrics.tp_rate:.4f}, tn_rate {metrics.tn_rate:.4f})")
    return EXIT_OK


def _cmd_roc(args, config):
    _, scores = pipeline.read_predictions_csv(args.pred)
    labels = scene.read_labels_csv(args.labels)
    curve = evaluation.roc(scores, labels)
    evaluation.write_roc_csv(curve, args.out)
    print(f"auc = {curve.auc:.4f} ({curve.thresholds.size} thresholds)")
    return EXIT_OK


def _cmd_grid(args, config):
    dataset = _dataset_from_files(args.audio, args.labels, config)
    grid = evaluation.ExperimentGrid(fractions=tuple(config.grid_fractions),
                                     ratios=tuple(config.grid_ratios))
    result = evaluation.run_grid(dataset, grid, config, seed=config.seed)
    evaluation.write_grid_csv(result, args.out)
    print(f"wrote {len(result.fractions) * len(result.ratios)} cells to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "mix": _cmd_mix,
    "features": _cmd_features,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "evaluate": _cmd_evaluate,
    "roc": _cmd_roc,
    "grid": _cmd_grid,
}


def cli_dispatch(argv) -> int:
    """Run one subcommand; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_pipeline_config(args)
        return _COMMANDS[args.command](args, config)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, BundleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DvadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))
