"""The documented synthetic benchmark used by the acceptance suite and demos.

Roughly ten minutes of synthesized speech at 8 kHz, contaminated with white
noise at 10 dB SNR and click transients. All parameters are frozen here so a
benchmark run is reproducible from its seed alone.
"""

from __future__ import annotations

import dataclasses

from . import pipeline, scene
from .config import PipelineConfig, scene_spec

BENCHMARK_CONFIG = PipelineConfig(
    scene_speech_source="synthetic",
    scene_speech_duration_s=600.0,
    scene_noise_source="white",
    scene_snr_db=10.0,
    scene_transient_source="click",
    scene_transients_per_minute=40.0,
    scene_transient_gain_db=0.0,
    scene_seed=7,
    seed=7,
)


def benchmark_config(**overrides) -> PipelineConfig:
    """The frozen benchmark configuration, optionally overridden."""
    return dataclasses.replace(BENCHMARK_CONFIG, **overrides)


def make_benchmark(config: PipelineConfig = None):
    """Mix the benchmark scene and extract its dataset.

    Returns ``(dataset, scene_result, config)``.
    """
    config = BENCHMARK_CONFIG if config is None else config
    result = scene.mix_scene(scene_spec(config))
    dataset = pipeline.prepare_dataset(result.noisy, result.labels, config)
    return dataset, result, config
