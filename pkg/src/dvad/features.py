"""Frame-level feature pipeline: noise-weighted cepstra with temporal context.

Each frame yields 8 cepstral coefficients from a 26-band mel filterbank,
weighted per band by an SNR gain driven by a minimum-statistics noise
estimate. First and second temporal differences extend these to 24 values,
and a one-frame context window on each side gives the 72-dimensional vector
consumed downstream. A fitted Standardizer then z-scores each dimension and
maps it into [0, 1] using the training range, so the vectors are directly
representable by saturating [0, 1] network activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from .errors import FeatureError
from .scene import FrameSequence

NOISE_WINDOW_FRAMES = 50
NOISE_BIAS = 1.5
NOISE_SMOOTHING = 0.9
MIN_BAND_GAIN = 0.1


@dataclass(frozen=True)
class MfccConfig:
    num_ceps: int = 8
    num_mel_filters: int = 26
    fft_length: int = 1024
    window: str = "hamming"
    log_floor: float = 1e-10
    weighting_enabled: bool = True
    noise_window_frames: int = NOISE_WINDOW_FRAMES
    noise_bias: float = NOISE_BIAS
    sample_rate_hz: int = 8000

    def __post_init__(self):
        if self.num_ceps > self.num_mel_filters:
            raise FeatureError("num_ceps must not exceed num_mel_filters")
        if self.window != "hamming":
            raise FeatureError(f"unsupported window {self.window!r}")
        if self.log_floor <= 0:
            raise FeatureError("log_floor must be positive")
        if self.noise_window_frames < 1 or self.noise_bias <= 0:
            raise FeatureError("invalid noise-estimate parameters")


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _filterbank(num_filters: int, fft_length: int,
                sample_rate: int) -> np.ndarray:
    """Triangular mel filters (unit peak) over [0, sample_rate/2]."""
    n_bins = fft_length // 2 + 1
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0),
                             num_filters + 2)
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.arange(n_bins) * sample_rate / fft_length
    bank = np.zeros((num_filters, n_bins))
    for b in range(num_filters):
        lo, mid, hi = hz_points[b], hz_points[b + 1], hz_points[b + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        bank[b] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mel_band_energies(frame: np.ndarray, config: MfccConfig) -> np.ndarray:
    """Per-band power of one frame: Hamming window, zero-pad, |FFT|^2, filterbank."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size > config.fft_length:
        raise FeatureError("frame longer than fft_length")
    if not np.all(np.isfinite(frame)):
        raise FeatureError("non-finite samples in frame")
    windowed = frame * np.hamming(frame.size)
    spectrum = np.fft.rfft(windowed, n=config.fft_length)
    power = np.real(spectrum) ** 2 + np.imag(spectrum) ** 2
    bank = _filterbank(config.num_mel_filters, config.fft_length,
                       config.sample_rate_hz)
    return bank @ power


def estimate_noise_psd(frames: FrameSequence,
                       config: MfccConfig) -> np.ndarray:
    """Minimum-statistics noise estimate per mel band, one row per frame.

    Band powers are recursively smoothed (pole ``NOISE_SMOOTHING``); the
    estimate at frame n is the per-band minimum of the smoothed powers over
    the trailing window of ``noise_window_frames`` frames, scaled by
    ``noise_bias`` and floored at ``log_floor``. Without the smoothing stage
    the minimum of the narrowest bands sits far below the true noise power.
    """
    if frames.n_frames < 1:
        raise FeatureError("need at least one frame")
    bands = np.stack([mel_band_energies(f, config) for f in frames.frames])
    return running_min_noise(bands, config)


def smooth_band_powers(power: np.ndarray, previous=None) -> np.ndarray:
    """One recursive-smoothing step; seeds from the first observation."""
    if previous is None:
        return np.asarray(power, dtype=np.float64)
    return NOISE_SMOOTHING * previous + (1.0 - NOISE_SMOOTHING) * power


def running_min_noise(band_powers: np.ndarray,
                      config: MfccConfig) -> np.ndarray:
    """Trailing-window minimum of smoothed band powers, biased and floored."""
    n = band_powers.shape[0]
    window = config.noise_window_frames
    smoothed = np.empty_like(band_powers)
    prev = None
    for i in range(n):
        prev = smooth_band_powers(band_powers[i], prev)
        smoothed[i] = prev
    est = np.empty_like(band_powers)
    for i in range(n):
        lo = max(0, i - window + 1)
        est[i] = np.min(smoothed[lo:i + 1], axis=0)
    return np.maximum(config.noise_bias * est, config.log_floor)


def band_weights(band_energy: np.ndarray, noise_psd: np.ndarray) -> np.ndarray:
    """Per-band SNR gain max(1 - noise/energy, 0.1); exactly 1 at zero noise."""
    noise_psd = np.asarray(noise_psd, dtype=np.float64)
    band_energy = np.asarray(band_energy, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(band_energy > 0.0, noise_psd / band_energy, np.inf)
    gains = np.maximum(1.0 - ratio, MIN_BAND_GAIN)
    return np.where(noise_psd == 0.0, 1.0, gains)


def compute_mfcc(frame: np.ndarray, noise_psd: np.ndarray,
                 config: MfccConfig) -> np.ndarray:
    """Cepstral coefficients 1..num_ceps of one frame (0th excluded)."""
    bands = mel_band_energies(frame, config)
    if config.weighting_enabled:
        bands = band_weights(bands, noise_psd) * bands
    log_bands = np.log(np.maximum(bands, config.log_floor))
    ceps = dct(log_bands, type=2, norm="ortho")
    return ceps[1:config.num_ceps + 1]


def append_deltas(mfcc_sequence: np.ndarray) -> np.ndarray:
    """Append first and second central differences (edge replication)."""
    seq = np.asarray(mfcc_sequence, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise FeatureError("expected an N x C coefficient matrix")

    def central(a):
        padded = np.concatenate([a[:1], a, a[-1:]], axis=0)
        return (padded[2:] - padded[:-2]) / 2.0

    delta = central(seq)
    delta2 = central(delta)
    return np.concatenate([seq, delta, delta2], axis=1)


def concat_context(base: np.ndarray, j: int = 1) -> np.ndarray:
    """Concatenate each row with its j neighbors on both sides (replicated edges)."""
    base = np.asarray(base, dtype=np.float64)
    if base.ndim != 2 or base.shape[0] < 1:
        raise FeatureError("expected an N x C feature matrix")
    n = base.shape[0]
    cols = []
    for off in range(-j, j + 1):
        idx = np.clip(np.arange(n) + off, 0, n - 1)
        cols.append(base[idx])
    return np.concatenate(cols, axis=1)


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-score parameters plus the post-z training range."""

    mu: np.ndarray
    sigma: np.ndarray
    range_lo: np.ndarray
    range_hi: np.ndarray
    degenerate: np.ndarray = field(repr=False)


def fit_standardizer(training_features: np.ndarray) -> Standardizer:
    """Population mean/std per dimension; zero-variance dims flagged, sigma=1."""
    x = np.asarray(training_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise FeatureError("need at least two rows to fit a standardizer")
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    degenerate = sigma == 0.0
    sigma = np.where(degenerate, 1.0, sigma)
    z = (x - mu) / sigma
    return Standardizer(mu=mu, sigma=sigma,
                        range_lo=z.min(axis=0), range_hi=z.max(axis=0),
                        degenerate=degenerate)


def apply_standardizer(vec: np.ndarray, s: Standardizer) -> np.ndarray:
    """z-score, then map the training range to [0, 1] with clamping.

    Dimensions whose training range collapsed to a point map to 0.5.
    """
    z = (np.asarray(vec, dtype=np.float64) - s.mu) / s.sigma
    span = s.range_hi - s.range_lo
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (z - s.range_lo) / span
    r = np.clip(r, 0.0, 1.0)
    return np.where(span > 0.0, r, 0.5)


def extract_context_features(frames: FrameSequence,
                             config: MfccConfig, j: int = 1) -> np.ndarray:
    """Full per-frame pipeline: noise estimate, weighted cepstra, deltas, context."""
    noise = estimate_noise_psd(frames, config)
    ceps = np.stack([compute_mfcc(frames.frames[i], noise[i], config)
                     for i in range(frames.n_frames)])
    return concat_context(append_deltas(ceps), j=j)


def write_features_csv(features: np.ndarray, path, labels=None) -> None:
    n, d = features.shape
    header = ",".join(f"f{i}" for i in range(d))
    if labels is not None:
        header += ",label"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(n):
            row = ",".join(repr(v) for v in features[i])
            if labels is not None:
                row += f",{int(labels[i])}"
            fh.write(row + "\n")
