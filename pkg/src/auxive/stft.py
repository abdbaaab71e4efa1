"""Multichannel short-time Fourier transform with least-squares overlap-add synthesis.

Frame ``l`` (0-based) covers samples ``[l*hop, l*hop + K)`` of the signal after
``K - hop`` zeros are prepended; the tail is zero-padded so that the last
sample is covered by every frame that overlaps it. Synthesis uses the analysis
window again and divides by the summed squared windows, which reconstructs the
interior exactly for any hop whose squared windows have no zeros there.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from .signal_io import MultichannelSignal

WINDOWS = ("hann", "sqrt_hann", "rect")


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size % 2:
            raise ValueError(f"fft_size must be a positive even integer, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must satisfy 0 < hop <= fft_size, got {self.hop}")
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}, expected one of {WINDOWS}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.fft_size - self.hop

    def analysis_window(self) -> np.ndarray:
        K = self.fft_size
        if self.window == "rect":
            return np.ones(K)
        win = get_window("hann", K, fftbins=True)
        return np.sqrt(win) if self.window == "sqrt_hann" else win

    def n_frames(self, n_samples: int) -> int:
        return -(-(n_samples + self.fft_size - 2 * self.hop) // self.hop) + 1


@dataclass(frozen=True)
class SpectrogramTensor:
    """One-sided STFT coefficients with shape (n_bins, n_frames, n_channels)."""

    coeffs: np.ndarray
    config: StftConfig
    sample_rate: int
    length: int = field(default=0)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs)
        if coeffs.ndim == 2:
            coeffs = coeffs[:, :, None]
        if coeffs.ndim != 3:
            raise ValueError(f"coeffs must be (bin, frame, channel), got shape {coeffs.shape}")
        if coeffs.shape[0] != self.config.n_bins:
            raise ValueError(
                f"expected {self.config.n_bins} bins for K={self.config.fft_size}, got {coeffs.shape[0]}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "coeffs", coeffs.astype(complex, copy=False))

    @property
    def n_bins(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_channels(self) -> int:
        return self.coeffs.shape[2]

    def channel(self, ch: int) -> "SpectrogramTensor":
        return self.with_coeffs(self.coeffs[:, :, ch : ch + 1])

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectrogramTensor":
        return SpectrogramTensor(coeffs, self.config, self.sample_rate, self.length)


def _frames(x: np.ndarray, K: int, hop: int, n_frames: int) -> np.ndarray:
    # x: (channels, padded_len) -> (frames, channels, K), read-only view
    view = np.lib.stride_tricks.sliding_window_view(x, K, axis=-1)[:, ::hop, :]
    return view[:, :n_frames, :].transpose(1, 0, 2)


def stft(signal: MultichannelSignal, config: StftConfig) -> SpectrogramTensor:
    K, hop = config.fft_size, config.hop
    N = signal.n_samples
    if N < K:
        raise ValueError(f"signal of {N} samples is shorter than one frame ({K})")
    n_frames = config.n_frames(N)
    total = (n_frames - 1) * hop + K
    padded = np.zeros((signal.n_channels, total))
    padded[:, config.pad : config.pad + N] = signal.samples

    win = config.analysis_window()
    frames = _frames(padded, K, hop, n_frames) * win
    spec = np.fft.rfft(frames, axis=-1)  # (frames, channels, bins)
    return SpectrogramTensor(spec.transpose(2, 0, 1), config, signal.sample_rate, N)


def synthesis_norm(config: StftConfig, n_frames: int) -> np.ndarray:
    """Summed squared analysis windows over the padded time axis."""
    K, hop = config.fft_size, config.hop
    win2 = config.analysis_window() ** 2
    norm = np.zeros((n_frames - 1) * hop + K)
    for l in range(n_frames):
        norm[l * hop : l * hop + K] += win2
    return norm


def istft(spec: SpectrogramTensor, length: int = None) -> MultichannelSignal:
    """Weighted overlap-add inverse of :func:`stft`.

    ``length`` defaults to the length recorded at analysis time, or to the
    full unpadded span when the tensor was built by hand.
    """
    config = spec.config
    K, hop = config.fft_size, config.hop
    n_frames = spec.n_frames
    if length is None:
        length = spec.length or (n_frames - 1) * hop + K - 2 * config.pad
    total = (n_frames - 1) * hop + K
    if config.pad + length > total:
        raise ValueError(f"requested length {length} exceeds the span of {n_frames} frames")

    norm = synthesis_norm(config, n_frames)[config.pad : config.pad + length]
    if norm.size and norm.min() <= 1e-8 * norm.max():
        raise ValueError(
            f"window {config.window!r} with hop {hop} does not satisfy overlap-add "
            "(summed squared window vanishes)"
        )

    win = config.analysis_window()
    frames = np.fft.irfft(spec.coeffs.transpose(1, 2, 0), n=K, axis=-1) * win  # (frames, ch, K)
    out = np.zeros((spec.n_channels, total))
    for l in range(n_frames):
        out[:, l * hop : l * hop + K] += frames[l]
    samples = out[:, config.pad : config.pad + length] / norm
    return MultichannelSignal(samples, spec.sample_rate)
