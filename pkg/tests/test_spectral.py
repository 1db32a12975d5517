import numpy as np
import pytest

from amtk.spectral import (
    CqtParams,
    SpectralConfigError,
    cqt,
    hz_to_mel,
    log_compress,
    mel_filterbank,
    mel_spectrogram,
    mel_to_hz,
    stft,
)
from amtk.synth import AudioBuffer, midi_to_hz


def _sine(freq, duration=1.0, rate=16000):
    t = np.arange(int(duration * rate)) / rate
    return AudioBuffer(rate, np.sin(2 * np.pi * freq * t))


def _dft_oracle(frame, window):
    """Direct O(n^2) DFT magnitude, written independently of the stft path."""
    n = len(frame)
    out = []
    for k in range(n // 2 + 1):
        acc = 0j
        for i in range(n):
            acc += window[i] * frame[i] * np.exp(-2j * np.pi * k * i / n)
        out.append(abs(acc))
    return np.array(out)


class TestStft:
    def test_zero_signal(self):
        spec = stft(AudioBuffer(16000, np.zeros(1024)), 256, 128)
        assert np.all(spec.matrix == 0)

    def test_constant_signal_rect_window(self):
        spec = stft(AudioBuffer(16000, np.ones(512)), 128, 64, window="rect")
        assert spec.matrix[0, 0] == pytest.approx(128)
        assert np.all(spec.matrix[0, 1:] < 1e-9)

    def test_sine_at_bin_frequency(self):
        # bin 8 of a 128-point DFT at 16 kHz is 1000 Hz; magnitude n/2
        spec = stft(_sine(1000.0, 0.1), 128, 128, window="rect")
        interior = spec.matrix[:-2]
        assert np.all(interior.argmax(axis=1) == 8)
        assert interior[0, 8] == pytest.approx(64, rel=1e-9)

    def test_matches_direct_dft_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(64)
        spec = stft(AudioBuffer(16000, x), 32, 32)
        window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(32) / 32)
        np.testing.assert_allclose(spec.matrix[0], _dft_oracle(x[:32], window), atol=1e-9)

    def test_linearity_of_magnitude(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(512)
        a = stft(AudioBuffer(16000, x), 128, 64).matrix
        b = stft(AudioBuffer(16000, 2 * x), 128, 64).matrix
        np.testing.assert_allclose(b, 2 * a, rtol=1e-9, atol=1e-12)

    def test_bad_hop(self):
        with pytest.raises(ValueError):
            stft(AudioBuffer(16000, np.zeros(256)), 128, 0)


class TestMel:
    def test_mel_closed_form(self):
        # 2595 * log10(2) evaluated independently
        assert hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0))
        assert float(hz_to_mel(700.0)) == pytest.approx(781.17, abs=0.01)

    def test_inverse(self):
        freqs = np.array([100.0, 700.0, 4000.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(freqs)), freqs, rtol=1e-12)

    def test_zero_signal(self):
        spec = mel_spectrogram(AudioBuffer(16000, np.zeros(2048)), 512, 256, 20, 30.0, 8000.0)
        assert np.all(spec.matrix == 0)
        assert spec.matrix.shape[1] == 20

    def test_centers_ascending(self):
        spec = mel_spectrogram(AudioBuffer(16000, np.ones(2048)), 512, 256, 24, 30.0, 8000.0)
        assert np.all(np.diff(spec.bin_center_freqs_hz) > 0)

    def test_weights_rows_positive(self):
        weights, _ = mel_filterbank(20, 257, 16000, 30.0, 8000.0)
        assert np.all(weights.sum(axis=1) > 0)
        assert np.all(weights >= 0)

    def test_too_many_mels(self):
        with pytest.raises(ValueError):
            mel_filterbank(300, 257, 16000, 30.0, 8000.0)


class TestCqt:
    def test_q_closed_form(self):
        assert CqtParams().q_factor == pytest.approx(1.0 / (2 ** (1 / 12) - 1))
        assert CqtParams().q_factor == pytest.approx(16.8172, abs=1e-4)

    def test_geometric_spacing(self):
        freqs = CqtParams().bin_freqs()
        ratios = freqs[1:] / freqs[:-1]
        np.testing.assert_allclose(ratios, 2 ** (1 / 12), rtol=1e-12)

    def test_zero_signal(self):
        spec = cqt(_sine(0.0, 0.3))
        assert np.all(spec.matrix == 0)

    def test_440_argmax(self):
        params = CqtParams()
        spec = cqt(_sine(440.0, 1.0), params)
        target = int(np.argmin(np.abs(params.bin_freqs() - 440.0)))
        interior = spec.matrix[10:-10]
        assert np.all(interior.argmax(axis=1) == target)

    def test_constant_quality(self):
        params = CqtParams()
        rate = 16000
        for f_k in params.bin_freqs():
            n_k = int(np.ceil(params.q_factor * rate / f_k))
            assert f_k * n_k / rate == pytest.approx(params.q_factor, abs=f_k / rate + 1e-12)

    def test_pitch_shift_moves_argmax_one_bin(self):
        params = CqtParams(n_bins=48)
        freqs = params.bin_freqs()
        a = cqt(_sine(freqs[20], 0.8), params).matrix[10:-10]
        b = cqt(_sine(freqs[21], 0.8), params).matrix[10:-10]
        assert np.all(a.argmax(axis=1) == 20)
        assert np.all(b.argmax(axis=1) == 21)

    def test_nyquist_guard(self):
        with pytest.raises(SpectralConfigError):
            cqt(_sine(440.0, 0.1), CqtParams(n_bins=120))

    def test_matches_direct_formula_oracle(self):
        # independent slow evaluation of the per-bin windowed inner product
        params = CqtParams(f_min_hz=220.0, n_bins=6, hop_samples=400)
        rate = 16000
        rng = np.random.default_rng(7)
        x = rng.standard_normal(4000)
        spec = cqt(AudioBuffer(rate, x), params)
        q = params.q_factor
        max_n = int(np.ceil(q * rate / 220.0))
        pad = max_n // 2 + 1
        padded = np.pad(x, pad, mode="reflect")
        expected = np.zeros_like(spec.matrix)
        for t in range(spec.n_frames):
            center = t * params.hop_samples + pad
            for k, f_k in enumerate(params.bin_freqs()):
                n_k = int(np.ceil(q * rate / f_k))
                w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_k) / n_k)
                seg = padded[center - n_k // 2:center - n_k // 2 + n_k]
                acc = np.sum(w * seg * np.exp(-2j * np.pi * q * np.arange(n_k) / n_k))
                expected[t, k] = abs(acc) / n_k
        rel = np.linalg.norm(spec.matrix - expected) / np.linalg.norm(expected)
        assert rel < 1e-6

    def test_frame_period(self):
        spec = cqt(_sine(440.0, 0.5))
        assert spec.frame_period_sec == pytest.approx(0.010)

    def test_log_compress(self):
        spec = cqt(_sine(440.0, 0.2))
        logged = log_compress(spec)
        assert logged.log_scale
        np.testing.assert_allclose(logged.matrix, np.log1p(1000 * spec.matrix))
