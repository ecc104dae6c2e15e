"""Feature pipeline behavior against independent oracles."""

import numpy as np
import pytest

from dvad.errors import FeatureError
from dvad.features import (MfccConfig, append_deltas, apply_standardizer,
                           band_weights, compute_mfcc, concat_context,
                           estimate_noise_psd, extract_context_features,
                           fit_standardizer, mel_band_energies, _filterbank)
from dvad.scene import (AudioSignal, colored_noise, frame_signal,
                        synthesize_speech)

CFG = MfccConfig()


def _white_frames(n_frames, seed=0, sigma=0.1):
    rng = np.random.default_rng(seed)
    samples = sigma * rng.standard_normal(634 + 317 * (n_frames - 1))
    return frame_signal(AudioSignal(np.clip(samples, -1, 1), 8000), 634, 317)


class TestNoiseEstimate:
    def test_white_noise_within_3db_of_true_band_power(self):
        sigma = 0.1
        frames = _white_frames(400, seed=1, sigma=sigma)
        est = estimate_noise_psd(frames, CFG)
        # True band power from the generator variance: every FFT bin of a
        # Hamming-windowed white frame has expected power sigma^2 * sum(w^2).
        window_power = np.sum(np.hamming(634) ** 2)
        bank = _filterbank(CFG.num_mel_filters, CFG.fft_length, 8000)
        true_power = sigma ** 2 * window_power * bank.sum(axis=1)
        settled = est[CFG.noise_window_frames:]
        ratio_db = 10 * np.log10(settled / true_power[None, :])
        assert np.max(np.abs(ratio_db)) < 3.0

    def test_all_zero_input_floors(self):
        signal = AudioSignal(np.zeros(634 * 3), 8000)
        est = estimate_noise_psd(frame_signal(signal, 634, 317), CFG)
        assert np.all(est == CFG.log_floor)

    def test_speech_plus_noise_below_mean_power(self):
        # Quiet broadband noise under broadband speech: speech lifts the
        # mean of every band well above the (biased) windowed minimum.
        rng = np.random.default_rng(7)
        speech = synthesize_speech(20.0, seed=7).samples
        noisy = np.clip(speech + 0.005 * rng.standard_normal(speech.size),
                        -1, 1)
        frames = frame_signal(AudioSignal(noisy, 8000), 634, 317)
        est = estimate_noise_psd(frames, CFG)
        bands = np.stack([mel_band_energies(f, CFG) for f in frames.frames])
        mean_power = bands.mean(axis=0)
        settled = np.median(est[CFG.noise_window_frames:], axis=0)
        assert np.all(settled <= mean_power)


def _naive_dft_band_energies(frame, cfg):
    """O(N^2) DFT oracle for the windowed, zero-padded power spectrum."""
    windowed = np.zeros(cfg.fft_length)
    windowed[:frame.size] = frame * np.hamming(frame.size)
    n = cfg.fft_length
    k = np.arange(n // 2 + 1)
    power = np.empty(k.size)
    for ki in k:
        basis = np.exp(-2j * np.pi * ki * np.arange(n) / n)
        power[ki] = np.abs(np.sum(windowed * basis)) ** 2
    bank = _filterbank(cfg.num_mel_filters, cfg.fft_length, cfg.sample_rate_hz)
    return bank @ power


class TestMfcc:
    def test_all_zero_frame_gives_zero_coefficients(self):
        out = compute_mfcc(np.zeros(634), np.full(26, 1e-4), CFG)
        assert np.max(np.abs(out)) < 1e-12

    def test_1khz_energy_concentration_vs_dft_oracle(self):
        frame = np.sin(2 * np.pi * 1000 * np.arange(634) / 8000)
        mine = mel_band_energies(frame, CFG)
        oracle = _naive_dft_band_energies(frame, CFG)
        np.testing.assert_allclose(mine, oracle, rtol=1e-9, atol=1e-9)
        bank = _filterbank(CFG.num_mel_filters, CFG.fft_length, 8000)
        bin_1k = int(round(1000 * CFG.fft_length / 8000))
        spanning = np.flatnonzero(bank[:, bin_1k] > 0)
        assert spanning.size == 2
        assert oracle[spanning].sum() >= 0.9 * oracle.sum()

    def test_zero_noise_weighting_is_identity(self):
        rng = np.random.default_rng(3)
        frame = 0.2 * rng.standard_normal(634)
        cfg_on = MfccConfig(weighting_enabled=True)
        cfg_off = MfccConfig(weighting_enabled=False)
        zero_noise = np.zeros(26)
        assert np.array_equal(compute_mfcc(frame, zero_noise, cfg_on),
                              compute_mfcc(frame, zero_noise, cfg_off))

    def test_band_gain_floor(self):
        energy = np.ones(4)
        noise = np.array([0.0, 0.5, 1.0, 100.0])
        np.testing.assert_allclose(band_weights(energy, noise),
                                   [1.0, 0.5, 0.1, 0.1])

    def test_scale_covariance(self):
        rng = np.random.default_rng(5)
        frame = 0.3 + 0.1 * rng.standard_normal(634)  # all bands above floor
        cfg = MfccConfig(weighting_enabled=False)
        base = compute_mfcc(frame, np.zeros(26), cfg)
        scaled = compute_mfcc(0.25 * frame, np.zeros(26), cfg)
        np.testing.assert_allclose(scaled, base, atol=1e-9)

    def test_nonfinite_frame_rejected(self):
        frame = np.zeros(634)
        frame[5] = np.nan
        with pytest.raises(FeatureError, match="non-finite"):
            compute_mfcc(frame, np.zeros(26), CFG)

    def test_frame_longer_than_fft_rejected(self):
        with pytest.raises(FeatureError, match="fft_length"):
            mel_band_energies(np.zeros(2048), CFG)


class TestDeltas:
    def test_constant_sequence(self):
        out = append_deltas(np.full((7, 8), 3.25))
        assert np.array_equal(out[:, 8:], np.zeros((7, 16)))

    def test_linear_ramp(self):
        v = 0.37
        seq = v * np.arange(10)[:, None] * np.ones((1, 8))
        out = append_deltas(seq)
        assert np.allclose(out[1:-1, 8:16], v)
        # Second difference is zero away from second-order edge effects.
        assert np.allclose(out[2:-2, 16:24], 0.0, atol=1e-12)

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(11)
        seq = rng.standard_normal((23, 8))
        out = append_deltas(seq)

        def loop_delta(a):
            n = a.shape[0]
            d = np.empty_like(a)
            for i in range(n):
                d[i] = (a[min(i + 1, n - 1)] - a[max(i - 1, 0)]) / 2.0
            return d

        d1 = loop_delta(seq)
        d2 = loop_delta(d1)
        assert np.array_equal(out, np.concatenate([seq, d1, d2], axis=1))


class TestContext:
    def test_single_row_replicates(self):
        row = np.arange(24.0)[None, :]
        out = concat_context(row, j=1)
        assert out.shape == (1, 72)
        assert np.array_equal(out[0], np.tile(row[0], 3))

    def test_output_dimension(self):
        base = np.zeros((9, 24))
        assert concat_context(base, j=1).shape[1] == 72

    def test_interior_rows_are_slices(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal((12, 24))
        out = concat_context(base, j=1)
        for n in range(1, 11):
            assert np.array_equal(out[n, :24], base[n - 1])
            assert np.array_equal(out[n, 24:48], base[n])
            assert np.array_equal(out[n, 48:], base[n + 1])


class TestStandardizer:
    def test_two_point_dimension(self):
        x = np.array([[0.0], [2.0]])
        s = fit_standardizer(x)
        assert s.mu[0] == pytest.approx(1.0)
        assert s.sigma[0] == pytest.approx(1.0)  # population std
        z = (x[:, 0] - s.mu[0]) / s.sigma[0]
        assert list(z) == [-1.0, 1.0]

    def test_constant_dimension_flagged(self):
        x = np.column_stack([np.full(5, 2.5), np.arange(5.0)])
        s = fit_standardizer(x)
        assert s.degenerate[0] and not s.degenerate[1]
        assert s.sigma[0] == 1.0
        z = (x - s.mu) / s.sigma
        assert np.all(z[:, 0] == 0.0)

    def test_fit_apply_mean_std(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((500, 72)) * rng.uniform(0.5, 3.0, 72)
        s = fit_standardizer(x)
        z = (x - s.mu) / s.sigma
        assert np.max(np.abs(z.mean(axis=0))) < 1e-9
        assert np.max(np.abs(z.std(axis=0) - 1.0)) < 1e-6

    def test_needs_two_rows(self):
        with pytest.raises(FeatureError):
            fit_standardizer(np.zeros((1, 72)))

    def test_apply_mean_vector(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((100, 5))
        s = fit_standardizer(x)
        r = apply_standardizer(s.mu, s)
        expected = (0.0 - s.range_lo) / (s.range_hi - s.range_lo)
        np.testing.assert_allclose(r, expected, atol=1e-12)

    def test_clamping_below_minimum(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(1.0, 2.0, size=(50, 3))
        s = fit_standardizer(x)
        r = apply_standardizer(np.full(3, -100.0), s)
        assert np.all(r == 0.0)

    def test_range_map_round_trip(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((200, 6))
        s = fit_standardizer(x)
        vec = x[17]
        z = (vec - s.mu) / s.sigma
        r = apply_standardizer(vec, s)
        z_back = s.range_lo + r * (s.range_hi - s.range_lo)
        np.testing.assert_allclose(z_back, z, atol=1e-12)

    def test_output_always_in_unit_box(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((100, 7))
        s = fit_standardizer(x)
        probe = rng.standard_normal((500, 7)) * 10
        r = apply_standardizer(probe, s)
        assert np.all((r >= 0.0) & (r <= 1.0))

    def test_degenerate_span_maps_to_half(self):
        x = np.column_stack([np.full(4, 1.0), np.arange(4.0)])
        s = fit_standardizer(x)
        r = apply_standardizer(np.array([55.0, 2.0]), s)
        assert r[0] == 0.5


class TestPipelineDeterminism:
    def test_bitwise_identical_features(self):
        frames = _white_frames(60, seed=12)
        a = extract_context_features(frames, CFG)
        b = extract_context_features(frames, CFG)
        assert a.shape == (60, 72)
        assert np.array_equal(a, b)
