"""Flat key=value pipeline configuration with validated defaults.

Every tunable of every stage lives in one document so a single hash pins a
run. Absent keys take the canonical defaults; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass

from .errors import ConfigError
from .features import MfccConfig
from .network import TrainConfig
from .errormap import SvmTrainConfig
from .scene import SceneSpec


@dataclass(frozen=True)
class PipelineConfig:
    # framing and labeling
    sample_rate: int = 8000
    frame_length: int = 634
    frame_hop: int = 317
    label_threshold_db: float = -40.0
    # cepstral features
    num_ceps: int = 8
    num_mel_filters: int = 26
    fft_length: int = 1024
    window: str = "hamming"
    log_floor: float = 1e-10
    weighting_enabled: bool = True
    noise_window_frames: int = 50
    noise_bias: float = 1.5
    context_j: int = 1
    # diffusion embedding
    knn_k: int = 10
    embed_dim: int = 3
    embed_max_points: int = 6000
    # network training
    hidden_units: int = 200
    pretrain_epochs: int = 1
    pretrain_lr: float = 0.1
    finetune_lr: float = 1e-5
    momentum: float = 0.9
    max_epochs: int = 1000
    min_gradient: float = 1e-6
    batch_size: int = 128
    l2_weight: float = 1e-7
    sparsity_weight: float = 4.0
    sparsity_target: float = 0.1
    init_std: float = 0.1
    # classifier
    svm_c: float = 1.0
    svm_epochs: int = 200
    # splits
    ded_train_fraction: float = 0.70
    classifier_fraction: float = 0.15
    test_fraction: float = 0.15
    # generalization grid
    grid_fractions: tuple = (0.25, 0.5, 0.75, 1.0)
    grid_ratios: tuple = (0.2, 0.35, 0.5, 0.65, 0.8)
    # run control
    seed: int = 0
    per_batch_dm: bool = False
    min_batch_frames: int = 200
    # scene synthesis
    scene_speech_source: str = "synthetic"
    scene_speech_duration_s: float = 600.0
    scene_noise_source: str = "white"
    scene_snr_db: float = 10.0
    scene_transient_source: str = "click"
    scene_transients_per_minute: float = 40.0
    scene_transient_gain_db: float = 0.0
    scene_seed: int = 0


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name: str, text: str):
    default = _FIELDS[name].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {text!r}") from exc


def validate_config(document: str) -> PipelineConfig:
    """Parse ``key = value`` lines (# comments) into a validated config."""
    overrides = {}
    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        if key in overrides:
            raise ConfigError(f"duplicate key {key!r}")
        overrides[key] = _parse_value(key, value)
    config = PipelineConfig(**overrides)
    _check(config)
    return config


def _check(c: PipelineConfig) -> None:
    def positive(name):
        if getattr(c, name) <= 0:
            raise ConfigError(f"{name} must be positive")

    for name in ("sample_rate", "frame_length", "frame_hop", "num_ceps",
                 "num_mel_filters", "fft_length", "log_floor",
                 "noise_window_frames", "noise_bias", "knn_k", "embed_dim",
                 "embed_max_points", "hidden_units", "pretrain_epochs",
                 "pretrain_lr", "finetune_lr", "max_epochs", "min_gradient",
                 "batch_size", "sparsity_weight", "init_std", "svm_c",
                 "svm_epochs", "min_batch_frames"):
        positive(name)
    if c.num_ceps > c.num_mel_filters:
        raise ConfigError("num_ceps must not exceed num_mel_filters")
    if c.fft_length < c.frame_length:
        raise ConfigError("fft_length must be >= frame_length")
    if c.window != "hamming":
        raise ConfigError(f"unsupported window {c.window!r}")
    if not 0.0 <= c.momentum < 1.0:
        raise ConfigError("momentum must be in [0, 1)")
    if not 0.0 < c.sparsity_target < 1.0:
        raise ConfigError("sparsity_target must be in (0, 1)")
    if c.context_j < 0:
        raise ConfigError("context_j must be >= 0")
    if c.l2_weight < 0:
        raise ConfigError("l2_weight must be >= 0")
    total = c.ded_train_fraction + c.classifier_fraction + c.test_fraction
    if abs(total - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    for group in ("grid_fractions", "grid_ratios"):
        values = getattr(c, group)
        if not values:
            raise ConfigError(f"{group} must not be empty")
        for v in values:
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{group} values must lie in (0, 1]")
    if math.isnan(c.scene_snr_db):
        raise ConfigError("scene_snr_db must not be NaN")
    if c.scene_transients_per_minute < 0:
        raise ConfigError("scene_transients_per_minute must be >= 0")


def serialize_config(config: PipelineConfig) -> str:
    lines = []
    for f in dataclasses.fields(PipelineConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(repr(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def config_hash(config: PipelineConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            return validate_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc


# --- projections onto the per-module configs ------------------------------

def mfcc_config(c: PipelineConfig) -> MfccConfig:
    return MfccConfig(
        num_ceps=c.num_ceps, num_mel_filters=c.num_mel_filters,
        fft_length=c.fft_length, window=c.window, log_floor=c.log_floor,
        weighting_enabled=c.weighting_enabled,
        noise_window_frames=c.noise_window_frames, noise_bias=c.noise_bias,
        sample_rate_hz=c.sample_rate)


def train_config(c: PipelineConfig, seed_offset: int = 0) -> TrainConfig:
    return TrainConfig(
        pretrain_epochs=c.pretrain_epochs, pretrain_lr=c.pretrain_lr,
        finetune_lr=c.finetune_lr, momentum=c.momentum,
        max_epochs=c.max_epochs, min_gradient=c.min_gradient,
        batch_size=c.batch_size, l2_weight=c.l2_weight,
        sparsity_weight=c.sparsity_weight, sparsity_target=c.sparsity_target,
        init_std=c.init_std, rng_seed=c.seed + seed_offset)


def svm_config(c: PipelineConfig) -> SvmTrainConfig:
    return SvmTrainConfig(c=c.svm_c, epochs=c.svm_epochs, rng_seed=c.seed)


def scene_spec(c: PipelineConfig) -> SceneSpec:
    return SceneSpec(
        speech_source=c.scene_speech_source,
        stationary_noise_source=c.scene_noise_source,
        snr_db=c.scene_snr_db,
        transient_source=c.scene_transient_source,
        transients_per_minute=c.scene_transients_per_minute,
        transient_gain_db=c.scene_transient_gain_db,
        rng_seed=c.scene_seed,
        speech_duration_s=c.scene_speech_duration_s)


def encoder_dims(c: PipelineConfig) -> tuple:
    input_dim = (2 * c.context_j + 1) * 3 * c.num_ceps
    return (input_dim, c.hidden_units, c.hidden_units, c.embed_dim)
