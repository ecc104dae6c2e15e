"""Audio ingestion, framing, labeling, and scene-mixing behavior."""

import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvad.errors import AudioError, SceneError
from dvad.scene import (AudioSignal, SceneSpec, click_burst, colored_noise,
                        frame_count, frame_signal, label_frames, load_audio,
                        mix_scene, resample, save_audio, synthesize_speech,
                        white_noise)


def _write_wav(path, samples, rate, channels=1):
    pcm = np.round(np.clip(samples, -1, 1) * 32767.0).astype("<i2")
    if channels == 2:
        pcm = np.column_stack([pcm, pcm]).reshape(-1)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


class TestLoadAudio:
    def test_identity_decode(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.uniform(-0.5, 0.5, 960000)
        path = tmp_path / "mono.wav"
        _write_wav(path, samples, 8000)
        signal = load_audio(path, expected_rate=8000)
        assert signal.samples.size == 960000
        assert signal.sample_rate_hz == 8000
        # 16-bit quantization is the only loss.
        assert np.max(np.abs(signal.samples - samples)) < 1.0 / 32767.0

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "stereo.wav"
        _write_wav(path, np.zeros(100), 8000, channels=2)
        with pytest.raises(AudioError, match="multi-channel"):
            load_audio(path)

    def test_rate_mismatch_without_flag(self, tmp_path):
        path = tmp_path / "fast.wav"
        _write_wav(path, np.zeros(100), 16000)
        with pytest.raises(AudioError, match="rate"):
            load_audio(path, expected_rate=8000)

    def test_unreadable(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"not audio at all")
        with pytest.raises(AudioError):
            load_audio(path)

    def test_resample_16k_to_8k(self, tmp_path):
        # Multitone below the passband edge; all tones on exact DFT bins.
        rate_in, n_in = 16000, 16000
        tones = [(500.0, 0.15), (1200.0, 0.12), (2300.0, 0.10), (3100.0, 0.08)]
        t = np.arange(n_in) / rate_in
        x = sum(a * np.sin(2 * np.pi * f * t) for f, a in tones)
        path = tmp_path / "multi.wav"
        _write_wav(path, x, rate_in)
        out = load_audio(path, expected_rate=8000, allow_resample=True)
        assert out.sample_rate_hz == 8000
        assert abs(out.samples.size - n_in // 2) <= 1

        # Independent oracle: DFT-domain resampling (truncate the spectrum).
        n_out = n_in // 2
        spectrum = np.fft.rfft(x)
        oracle = np.fft.irfft(spectrum[:n_out // 2 + 1] * (n_out / n_in),
                              n=n_out)

        def tone_mag(y, freq, rate):
            n = y.size
            k = int(round(freq * n / rate))
            return np.abs(np.fft.rfft(y))[k] * 2.0 / n

        for freq, _ in tones:
            got = tone_mag(out.samples[:n_out], freq, 8000)
            want = tone_mag(oracle, freq, 8000)
            db = 20.0 * math.log10(got / want)
            assert abs(db) < 1.0, f"tone {freq} Hz off by {db:.3f} dB"


class TestFraming:
    def test_canonical_frame_count(self):
        # floor((960000 - 634)/317) + 1, and the resulting frame rate.
        n = frame_count(960000, 634, 317)
        assert n == (960000 - 634) // 317 + 1 == 3027
        assert abs(8000 / 317 - 25.24) < 0.01  # ~25 frames/second

    def test_single_exact_frame(self):
        signal = AudioSignal(np.ones(634) * 0.1, 8000)
        assert frame_signal(signal, 634, 317).n_frames == 1

    def test_too_short(self):
        signal = AudioSignal(np.ones(633) * 0.1, 8000)
        with pytest.raises(AudioError, match="too short"):
            frame_signal(signal, 634, 317)

    def test_frame_starts(self):
        signal = AudioSignal(np.arange(50) / 100.0, 8000)
        frames = frame_signal(signal, 10, 4)
        for i in range(frames.n_frames):
            assert np.array_equal(frames.frames[i],
                                  signal.samples[4 * i:4 * i + 10])

    @given(st.integers(1, 400), st.integers(1, 50), st.integers(1, 30))
    @settings(max_examples=200, deadline=None)
    def test_count_formula_matches_loop_oracle(self, length, m, hop):
        if length < m:
            return
        count = 0
        start = 0
        while start + m <= length:  # naive enumeration
            count += 1
            start += hop
        assert frame_count(length, m, hop) == count


class TestLabels:
    def test_zero_frame_is_silence(self):
        samples = np.zeros(634 * 4)
        samples[:634] = 0.5 * np.sin(np.arange(634))
        labels = label_frames(frame_signal(AudioSignal(samples, 8000), 634, 634))
        assert labels[0] == 1
        assert labels[-1] == 0

    def test_max_energy_frame_is_speech(self):
        rng = np.random.default_rng(1)
        samples = rng.uniform(-0.3, 0.3, 634 * 6)
        frames = frame_signal(AudioSignal(samples, 8000), 634, 317)
        labels = label_frames(frames)
        energies = np.sum(frames.frames ** 2, axis=1)
        assert labels[int(np.argmax(energies))] == 1

    def test_minus_41db_sinusoid_is_silence(self):
        # Energy ratio computed by direct summation is exactly -41 dB.
        tone = 0.9 * np.sin(2 * np.pi * 440 * np.arange(634) / 8000)
        quiet = tone * 10.0 ** (-41.0 / 20.0)
        e_loud = np.sum(tone ** 2)
        e_quiet = np.sum(quiet ** 2)
        assert abs(10 * np.log10(e_quiet / e_loud) + 41.0) < 1e-9
        signal = AudioSignal(np.concatenate([tone, quiet]), 8000)
        labels = label_frames(frame_signal(signal, 634, 634))
        assert list(labels) == [1, 0]

    def test_all_zero_signal_rejected(self):
        signal = AudioSignal(np.zeros(2000), 8000)
        with pytest.raises(SceneError, match="no speech"):
            label_frames(frame_signal(signal, 634, 317))


def _tone_speech(n=634 * 40, rate=8000, seed=3):
    """Deterministic speech stand-in: tone bursts separated by silence."""
    rng = np.random.default_rng(seed)
    out = np.zeros(n)
    pos = 0
    while pos + 2000 < n:
        seg = int(rng.uniform(1500, 4000))
        seg = min(seg, n - pos)
        f = rng.uniform(200, 800)
        out[pos:pos + seg] = 0.5 * np.sin(2 * np.pi * f * np.arange(seg) / rate)
        pos += seg + int(rng.uniform(1500, 4000))
    return AudioSignal(out, rate)


class TestMixScene:
    def test_identity_mix(self):
        speech = _tone_speech()
        spec = SceneSpec(speech_source=speech, snr_db=math.inf,
                         transients_per_minute=0.0, rng_seed=5)
        result = mix_scene(spec)
        assert np.array_equal(result.noisy.samples, result.clean.samples)

    def test_snr_zero_db_measured(self):
        speech = _tone_speech()
        spec = SceneSpec(speech_source=speech, stationary_noise_source="white",
                         snr_db=0.0, transients_per_minute=0.0, rng_seed=5)
        result = mix_scene(spec)
        # Recompute the SNR from the component tracks over active frames.
        frames_clean = frame_signal(result.clean)
        labels = label_frames(frames_clean)
        noise_frames = frame_signal(
            AudioSignal(np.clip(result.stationary, -1, 1), 8000))
        active = labels == 1
        e_sp = np.sum(frames_clean.frames[active] ** 2)
        e_noise = np.sum(noise_frames.frames[active] ** 2)
        measured = 10 * np.log10(e_sp / e_noise)
        assert abs(measured - 0.0) <= 0.1

    def test_seeded_determinism(self):
        speech = _tone_speech()
        spec = SceneSpec(speech_source=speech, snr_db=10.0,
                         transients_per_minute=30.0, rng_seed=11)
        a = mix_scene(spec)
        b = mix_scene(spec)
        assert np.array_equal(a.noisy.samples, b.noisy.samples)

    def test_decomposition_is_exact(self):
        speech = _tone_speech()
        spec = SceneSpec(speech_source=speech, snr_db=5.0,
                         transients_per_minute=60.0, rng_seed=2)
        r = mix_scene(spec)
        residual = (r.noisy.samples - r.clean.samples - r.stationary
                    - r.transient)
        assert np.max(np.abs(residual)) < 1e-12

    def test_labels_do_not_depend_on_noise(self):
        speech = _tone_speech()
        specs = [SceneSpec(speech_source=speech, snr_db=snr,
                           stationary_noise_source=kind,
                           transients_per_minute=tpm, rng_seed=seed)
                 for snr, kind, tpm, seed in
                 ((20.0, "white", 0.0, 1), (0.0, "colored", 90.0, 2))]
        labels = [mix_scene(s).labels for s in specs]
        assert np.array_equal(labels[0], labels[1])

    def test_zero_energy_noise_rejected(self):
        speech = _tone_speech()
        silent = AudioSignal(np.zeros(1000), 8000)
        spec = SceneSpec(speech_source=speech, stationary_noise_source=silent,
                         snr_db=10.0, transients_per_minute=0.0)
        with pytest.raises(SceneError, match="impossible SNR"):
            mix_scene(spec)

    def test_transient_longer_than_signal(self):
        speech = _tone_speech(n=634 * 40)
        too_long = AudioSignal(np.ones(634 * 41) * 0.1, 8000)
        spec = SceneSpec(speech_source=speech, snr_db=math.inf,
                         transient_source=too_long, transients_per_minute=5.0)
        with pytest.raises(SceneError, match="transient longer"):
            mix_scene(spec)


class TestGenerators:
    def test_colored_noise_unit_variance(self):
        rng = np.random.default_rng(0)
        x = colored_noise(200000, rng)
        assert abs(np.var(x) - 1.0) < 0.05

    def test_click_burst_shape(self):
        rng = np.random.default_rng(0)
        burst = click_burst(rng, 8000)
        assert np.max(np.abs(burst)) == pytest.approx(1.0)
        assert burst.size == int(0.06 * 8000)

    def test_synthesized_speech_has_both_classes(self):
        speech = synthesize_speech(30.0, seed=4)
        labels = label_frames(frame_signal(speech))
        assert 0.15 < np.mean(labels) < 0.9
        again = synthesize_speech(30.0, seed=4)
        assert np.array_equal(speech.samples, again.samples)


class TestRoundTrip:
    def test_save_load(self, tmp_path):
        signal = _tone_speech(n=8000)
        path = tmp_path / "out.wav"
        save_audio(signal, path)
        back = load_audio(path, expected_rate=8000)
        assert np.max(np.abs(back.samples - signal.samples)) < 1.0 / 32767.0
