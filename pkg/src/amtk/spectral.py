"""Time-frequency transforms: STFT, mel spectrogram, constant-Q transform.

The CQT uses geometrically spaced bins f_k = f_min * 2^(k/b) and per-bin
window lengths N_k = ceil(Q * rate / f_k) with Q = 1/(2^(1/b) - 1), so every
bin sees the same number of cycles.  Frames are centered on t * hop with
reflection padding at the edges.  The implementation evaluates the direct
per-bin windowed inner product (vectorized); there is no approximation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .synth import AudioBuffer

LOG_COMPRESSION_GAMMA = 1000.0


class SpectralConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrogram:
    frame_period_sec: float
    bin_center_freqs_hz: np.ndarray  # strictly ascending
    matrix: np.ndarray  # frames x bins, magnitudes
    log_scale: bool = False

    @property
    def n_frames(self):
        return self.matrix.shape[0]

    @property
    def n_bins(self):
        return self.matrix.shape[1]


@dataclass(frozen=True)
class CqtParams:
    f_min_hz: float = 32.70
    bins_per_octave: int = 12
    n_bins: int = 88
    hop_samples: int = 160
    window: str = "hann"

    @property
    def q_factor(self) -> float:
        return 1.0 / (2.0 ** (1.0 / self.bins_per_octave) - 1.0)

    def bin_freqs(self) -> np.ndarray:
        k = np.arange(self.n_bins)
        return self.f_min_hz * 2.0 ** (k / self.bins_per_octave)

    def validate(self, sample_rate_hz: int) -> None:
        top = self.bin_freqs()[-1]
        if top * (1.0 + 1.0 / (2.0 * self.q_factor)) >= sample_rate_hz / 2:
            raise SpectralConfigError(
                f"top bin {top:.1f} Hz violates the Nyquist guard at rate {sample_rate_hz}"
            )

    def key_string(self) -> str:
        return (
            f"cqt:fmin={self.f_min_hz!r}:b={self.bins_per_octave}"
            f":n={self.n_bins}:hop={self.hop_samples}:win={self.window}"
        )


def _window(name: str, n: int) -> np.ndarray:
    if name == "hann":
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    if name == "rect":
        return np.ones(n)
    raise SpectralConfigError(f"unknown window {name!r}")


def stft(audio: AudioBuffer, window_len: int, hop: int, window: str = "hann") -> Spectrogram:
    """Magnitude STFT, bins 0..window_len//2, zero-padded at the tail."""
    x = np.asarray(audio.samples, dtype=np.float64)
    if not 0 < hop <= window_len <= len(x):
        raise ValueError(
            f"need 0 < hop ({hop}) <= window_len ({window_len}) <= samples ({len(x)})"
        )
    n_frames = 1 + (len(x) - 1) // hop
    padded = np.concatenate([x, np.zeros(window_len)])
    frames = np.stack([padded[t * hop:t * hop + window_len] for t in range(n_frames)])
    spec = np.fft.rfft(frames * _window(window, window_len), n=window_len, axis=1)
    freqs = np.fft.rfftfreq(window_len, d=1.0 / audio.sample_rate_hz)
    return Spectrogram(hop / audio.sample_rate_hz, freqs, np.abs(spec))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft_bins: int, sample_rate_hz: int,
                   f_lo: float, f_hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters on the mel scale; returns (weights, center freqs)."""
    if not 0 <= f_lo < f_hi <= sample_rate_hz / 2:
        raise ValueError(f"need 0 <= f_lo < f_hi <= Nyquist, got {f_lo}, {f_hi}")
    if n_mels > n_fft_bins:
        raise ValueError(f"n_mels {n_mels} exceeds STFT bins {n_fft_bins}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_mels + 2))
    fft_freqs = np.arange(n_fft_bins) * sample_rate_hz / (2.0 * (n_fft_bins - 1))
    weights = np.zeros((n_mels, n_fft_bins))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_freqs - lo) / (center - lo)
        down = (hi - fft_freqs) / (hi - center)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
    return weights, edges[1:-1]


def mel_spectrogram(audio: AudioBuffer, window_len: int, hop: int,
                    n_mels: int, f_lo: float, f_hi: float) -> Spectrogram:
    base = stft(audio, window_len, hop)
    weights, centers = mel_filterbank(
        n_mels, base.n_bins, audio.sample_rate_hz, f_lo, f_hi
    )
    return Spectrogram(base.frame_period_sec, centers, base.matrix @ weights.T)


def cqt(audio: AudioBuffer, params: CqtParams = CqtParams()) -> Spectrogram:
    """Constant-Q magnitudes, frames x n_bins.

    Per frame t and bin k:
        X[t, k] = (1/N_k) * | sum_n w_k[n] x[t*hop - N_k/2 + n] e^{-2 pi i Q n / N_k} |
    """
    params.validate(audio.sample_rate_hz)
    rate = audio.sample_rate_hz
    hop = params.hop_samples
    q = params.q_factor
    freqs = params.bin_freqs()
    x = np.asarray(audio.samples, dtype=np.float64)
    n_frames = max(1, int(np.ceil(len(x) / hop))) if len(x) else 0
    out = np.zeros((n_frames, params.n_bins))
    if n_frames == 0:
        return Spectrogram(hop / rate, freqs, out)

    max_n = int(np.ceil(q * rate / freqs[0]))
    pad = max_n // 2 + 1
    if len(x) > pad:
        padded = np.pad(x, pad, mode="reflect")
    else:  # too short to reflect a full kernel; fall back to zeros
        padded = np.pad(x, pad, mode="constant")
    centers = np.arange(n_frames) * hop + pad

    for k, f_k in enumerate(freqs):
        n_k = int(np.ceil(q * rate / f_k))
        w = _window(params.window, n_k)
        phase = -2j * np.pi * q * np.arange(n_k) / n_k
        kernel = (w * np.exp(phase)) / n_k
        starts = centers - n_k // 2
        idx = starts[:, None] + np.arange(n_k)[None, :]
        segments = padded[idx]
        out[:, k] = np.abs(segments @ kernel)
    return Spectrogram(hop / rate, freqs, out)


def log_compress(spec: Spectrogram, gamma: float = LOG_COMPRESSION_GAMMA) -> Spectrogram:
    """Dynamic-range compression log(1 + gamma * magnitude) for model input."""
    return Spectrogram(
        spec.frame_period_sec,
        spec.bin_center_freqs_hz,
        np.log1p(gamma * spec.matrix),
        log_scale=True,
    )
