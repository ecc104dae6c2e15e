"""Audio ingestion, framing, labeling, and synthetic noisy-scene construction.

A scene is built from three additive tracks: clean speech, a stationary
background noise scaled to a target SNR over the speech-active frames, and a
train of short transient bursts. Frame labels are derived from the clean
speech track alone, so remixing with different noise never changes them.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import lfilter, upfirdn

from .errors import AudioError, SceneError

CANONICAL_RATE = 8000
FRAME_LENGTH = 634
FRAME_HOP = 317
LABEL_THRESHOLD_DB = -40.0

RESAMPLE_TAPS = 64


@dataclass(frozen=True)
class AudioSignal:
    """A mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise AudioError("signal must be a nonempty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise AudioError("signal contains non-finite samples")
        if np.max(np.abs(samples)) > 1.0 + 1e-9:
            raise AudioError("samples exceed the [-1, 1] range")
        if self.sample_rate_hz <= 0:
            raise AudioError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class FrameSequence:
    """Overlapping analysis frames cut from a signal (one frame per row)."""

    frame_length: int
    hop: int
    frames: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic noisy scene.

    Sources may be an AudioSignal, a WAV path, or a generator tag:
    ``"synthetic"`` (speech), ``"white"``/``"colored"`` (stationary noise),
    ``"click"`` (transients). ``snr_db = inf`` disables the stationary track.
    ``transient_gain_db`` is relative to the clean speech peak.
    """

    speech_source: object = "synthetic"
    stationary_noise_source: object = "white"
    snr_db: float = 10.0
    transient_source: object = "click"
    transients_per_minute: float = 40.0
    transient_gain_db: float = 0.0
    rng_seed: int = 0
    speech_duration_s: float = 120.0

    def __post_init__(self):
        if math.isnan(self.snr_db):
            raise SceneError("snr_db must not be NaN")
        if self.transients_per_minute < 0:
            raise SceneError("transients_per_minute must be nonnegative")


@dataclass(frozen=True)
class SceneResult:
    """Mixed scene plus the component tracks it decomposes into."""

    noisy: AudioSignal
    clean: AudioSignal
    labels: np.ndarray
    stationary: np.ndarray
    transient: np.ndarray


def load_audio(path, expected_rate: int = CANONICAL_RATE,
               allow_resample: bool = False) -> AudioSignal:
    """Read a 16-bit PCM mono RIFF file and scale samples to [-1, 1].

    If the file rate differs from ``expected_rate``, a 64-tap windowed-sinc
    resampler is applied when ``allow_resample`` is set; otherwise the
    mismatch is an error.
    """
    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            sampwidth = wav.getsampwidth()
            rate = wav.getframerate()
            raw = wav.readframes(wav.getnframes())
    except (OSError, wave.Error) as exc:
        raise AudioError(f"unreadable WAV file {path!r}: {exc}") from exc
    if n_channels != 1:
        raise AudioError("multi-channel unsupported")
    if sampwidth != 2:
        raise AudioError(f"expected 16-bit PCM, got {8 * sampwidth}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise AudioError("empty audio file")
    signal = AudioSignal(samples, rate)
    if rate != expected_rate:
        if not allow_resample:
            raise AudioError(
                f"sample rate {rate} Hz differs from expected "
                f"{expected_rate} Hz (pass allow_resample to convert)")
        signal = resample(signal, expected_rate)
    return signal


def save_audio(signal: AudioSignal, path) -> None:
    """Write a signal as 16-bit PCM mono RIFF."""
    pcm = np.round(np.clip(signal.samples, -1.0, 1.0) * 32767.0)
    pcm = pcm.astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(signal.sample_rate_hz)
        wav.writeframes(pcm.tobytes())


def _sinc_kernel(up: int, down: int) -> np.ndarray:
    # Lowpass at the tighter of the two Nyquist edges, Hamming-windowed.
    cutoff = 0.5 / max(up, down)
    m = np.arange(RESAMPLE_TAPS, dtype=np.float64)
    center = (RESAMPLE_TAPS - 1) / 2.0
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * (m - center))
    return h * np.hamming(RESAMPLE_TAPS) * up


def resample(signal: AudioSignal, target_rate: int) -> AudioSignal:
    """Rational-ratio resampling with a 64-tap windowed-sinc filter."""
    if target_rate <= 0:
        raise AudioError("target rate must be positive")
    if target_rate == signal.sample_rate_hz:
        return signal
    ratio = Fraction(target_rate, signal.sample_rate_hz)
    up, down = ratio.numerator, ratio.denominator
    h = _sinc_kernel(up, down)
    full = upfirdn(h, signal.samples, up=up, down=down)
    offset = int(round((RESAMPLE_TAPS - 1) / 2.0 * up / down))
    n_out = int(round(signal.samples.size * up / down))
    out = full[offset:offset + n_out]
    if out.size < n_out:
        out = np.pad(out, (0, n_out - out.size))
    return AudioSignal(np.clip(out, -1.0, 1.0), target_rate)


def frame_signal(signal: AudioSignal, frame_length: int = FRAME_LENGTH,
                 hop: int = FRAME_HOP) -> FrameSequence:
    """Cut a signal into overlapping frames; frame n starts at n*hop."""
    if hop < 1:
        raise AudioError("hop must be >= 1")
    samples = signal.samples
    if samples.size < frame_length:
        raise AudioError("signal too short")
    n = (samples.size - frame_length) // hop + 1
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n)[:, None]
    return FrameSequence(frame_length, hop, samples[idx])


def frame_count(n_samples: int, frame_length: int, hop: int) -> int:
    if n_samples < frame_length:
        raise AudioError("signal too short")
    return (n_samples - frame_length) // hop + 1


def label_frames(clean_frames: FrameSequence,
                 threshold_db: float = LABEL_THRESHOLD_DB) -> np.ndarray:
    """Per-frame speech labels from the clean signal's frame energies.

    A frame is speech iff its energy exceeds the maximum frame energy by
    more than ``threshold_db`` (relative, in dB).
    """
    energies = np.sum(clean_frames.frames ** 2, axis=1)
    e_max = float(np.max(energies))
    if e_max <= 0.0:
        raise SceneError("no speech content (clean signal is all-zero)")
    with np.errstate(divide="ignore"):
        rel_db = 10.0 * np.log10(energies / e_max)
    return (rel_db > threshold_db).astype(np.int8)


# --- generators ----------------------------------------------------------

def white_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(n)


def colored_noise(n: int, rng: np.random.Generator,
                  pole: float = 0.9) -> np.ndarray:
    """First-order IIR-filtered white noise, normalized to unit variance."""
    w = rng.standard_normal(n)
    out = lfilter([1.0], [1.0, -pole], w)
    return out * math.sqrt(1.0 - pole * pole)


def click_burst(rng: np.random.Generator, sample_rate: int,
                duration_s: float = 0.06, decay_s: float = 0.012) -> np.ndarray:
    """Exponentially decaying noise burst, peak-normalized to 1."""
    n = max(int(round(duration_s * sample_rate)), 8)
    t = np.arange(n) / sample_rate
    burst = rng.standard_normal(n) * np.exp(-t / decay_s)
    return burst / np.max(np.abs(burst))


def _resonator(x: np.ndarray, freq: float, bandwidth: float,
               sample_rate: int) -> np.ndarray:
    # Two-pole resonator, peak gain normalized to ~1.
    r = math.exp(-math.pi * bandwidth / sample_rate)
    theta = 2.0 * math.pi * freq / sample_rate
    b0 = (1.0 - r) * math.sqrt(1.0 - 2.0 * r * math.cos(2.0 * theta) + r * r)
    return lfilter([b0], [1.0, -2.0 * r * math.cos(theta), r * r], x)


def synthesize_speech(duration_s: float, sample_rate: int = CANONICAL_RATE,
                      seed: int = 0) -> AudioSignal:
    """Generate speech-like audio: voiced formant syllables with pauses.

    Utterances of a few syllables alternate with silent pauses. Each voiced
    syllable is a pitch-modulated sawtooth shaped by two random formant
    resonators and an attack/decay envelope; a fraction of syllables are
    noise-like fricatives. Stands in for a recorded corpus when none is
    available; deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    n_total = int(round(duration_s * sample_rate))
    out = np.zeros(n_total)
    pos = 0
    while pos < n_total:
        base_pitch = rng.uniform(90.0, 230.0)
        n_syllables = rng.integers(2, 7)
        for _ in range(n_syllables):
            if pos >= n_total:
                break
            dur = rng.uniform(0.08, 0.35)
            n = int(dur * sample_rate)
            n = min(n, n_total - pos)
            if n < 16:
                break
            amp = rng.uniform(0.25, 0.7)
            if rng.uniform() < 0.18:
                # Fricative: high-passed noise.
                seg = np.diff(rng.standard_normal(n + 1))
                seg *= 0.35 * amp / max(np.max(np.abs(seg)), 1e-12)
            else:
                f0 = base_pitch * (1.0 + 0.12 * np.sin(
                    2.0 * math.pi * rng.uniform(2.0, 6.0)
                    * np.arange(n) / sample_rate)
                    + rng.uniform(-0.08, 0.08))
                phase = 2.0 * math.pi * np.cumsum(f0) / sample_rate
                source = 2.0 * ((phase / (2.0 * math.pi)) % 1.0) - 1.0
                f1 = rng.uniform(300.0, 900.0)
                f2 = rng.uniform(1000.0, 2400.0)
                seg = (_resonator(source, f1, 90.0, sample_rate)
                       + 0.6 * _resonator(source, f2, 140.0, sample_rate))
                seg *= amp / max(np.max(np.abs(seg)), 1e-12)
            edge = max(int(0.012 * sample_rate), 2)
            ramp = np.minimum(1.0, np.minimum(
                np.arange(n) / edge, (n - 1 - np.arange(n)) / edge))
            out[pos:pos + n] = seg * ramp
            pos += n
            pos += int(rng.uniform(0.02, 0.10) * sample_rate)  # intra-word gap
        pos += int(rng.uniform(0.45, 1.6) * sample_rate)  # pause
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.7 / peak
    return AudioSignal(out, sample_rate)


# --- scene assembly ------------------------------------------------------

def _resolve_speech(spec: SceneSpec) -> AudioSignal:
    src = spec.speech_source
    if isinstance(src, AudioSignal):
        return src
    if src == "synthetic":
        return synthesize_speech(spec.speech_duration_s,
                                 seed=spec.rng_seed + 1)
    return load_audio(src)


def _resolve_stationary(spec: SceneSpec, n: int,
                        rng: np.random.Generator) -> np.ndarray:
    src = spec.stationary_noise_source
    if isinstance(src, AudioSignal):
        track = src.samples
    elif src == "white":
        return white_noise(n, rng)
    elif src == "colored":
        return colored_noise(n, rng)
    else:
        track = load_audio(src).samples
    if track.size == 0 or not np.any(track):
        raise SceneError("impossible SNR: stationary noise source has zero energy")
    reps = int(np.ceil(n / track.size))
    return np.tile(track, reps)[:n]


def _resolve_transient(spec: SceneSpec,
                       rng: np.random.Generator) -> np.ndarray:
    src = spec.transient_source
    if isinstance(src, AudioSignal):
        return src.samples
    if src == "click":
        return click_burst(rng, CANONICAL_RATE)
    return load_audio(src).samples


def mix_scene(spec: SceneSpec) -> SceneResult:
    """Assemble speech + scaled stationary noise + transient bursts.

    The stationary track is scaled so the SNR measured over speech-active
    frames matches ``spec.snr_db`` exactly; transient bursts are placed at
    seeded uniform offsets at the requested rate. Labels come from the
    clean track only. If the mix peaks above full scale, every track is
    scaled down together so the additive decomposition is preserved.
    """
    clean = _resolve_speech(spec)
    n = clean.samples.size
    rng = np.random.default_rng(spec.rng_seed)
    frames = frame_signal(clean)
    labels = label_frames(frames)
    active = labels == 1
    if not np.any(active):
        raise SceneError("no speech content in speech source")

    hop, m = frames.hop, frames.frame_length
    starts = hop * np.arange(frames.n_frames)[active]

    stationary = np.zeros(n)
    if math.isfinite(spec.snr_db):
        raw = _resolve_stationary(spec, n, rng)
        idx = starts[:, None] + np.arange(m)[None, :]
        e_speech = float(np.sum(clean.samples[idx] ** 2))
        e_noise = float(np.sum(raw[idx] ** 2))
        if e_noise <= 0.0:
            raise SceneError("impossible SNR: noise has zero energy over active frames")
        alpha = math.sqrt(e_speech / (e_noise * 10.0 ** (spec.snr_db / 10.0)))
        stationary = alpha * raw

    transient = np.zeros(n)
    if spec.transients_per_minute > 0:
        burst = _resolve_transient(spec, rng)
        if burst.size > n:
            raise SceneError("transient longer than signal")
        speech_peak = float(np.max(np.abs(clean.samples)))
        gain = 10.0 ** (spec.transient_gain_db / 20.0) * speech_peak
        minutes = n / clean.sample_rate_hz / 60.0
        n_events = int(rng.poisson(spec.transients_per_minute * minutes))
        offsets = rng.integers(0, n - burst.size + 1, size=n_events)
        for off in offsets:
            transient[off:off + burst.size] += gain * burst

    noisy = clean.samples + stationary + transient
    peak = float(np.max(np.abs(noisy)))
    if peak > 0.999:
        scale = 0.999 / peak
        noisy = noisy * scale
        stationary = stationary * scale
        transient = transient * scale
        clean = AudioSignal(clean.samples * scale, clean.sample_rate_hz)
        labels = label_frames(frame_signal(clean))
    return SceneResult(
        noisy=AudioSignal(noisy, clean.sample_rate_hz),
        clean=clean,
        labels=labels,
        stationary=stationary,
        transient=transient,
    )


def write_labels_csv(labels: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("frame_index,label\n")
        for i, lab in enumerate(labels):
            fh.write(f"{i},{int(lab)}\n")


def read_labels_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("frame_index"):
            raise SceneError(f"not a labels CSV: {path}")
        for line in fh:
            line = line.strip()
            if line:
                _, lab = line.split(",")
                rows.append(int(lab))
    return np.asarray(rows, dtype=np.int8)
