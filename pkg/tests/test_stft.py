import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auxive.signal_io import MultichannelSignal
from auxive.stft import SpectrogramTensor, StftConfig, istft, stft

CFG = StftConfig(512, 160)


def interior(n, config):
    return slice(config.fft_size, n - config.fft_size)


def test_zero_signal():
    spec = stft(MultichannelSignal(np.zeros((2, 4000)), 16000), CFG)
    assert np.all(spec.coeffs == 0)
    assert np.all(istft(spec).samples == 0)


def test_impulse_rect():
    cfg = StftConfig(4, 4, "rect")
    x = np.zeros(16)
    x[0] = 1.0
    spec = stft(MultichannelSignal(x, 16000), cfg)
    assert np.allclose(spec.coeffs[:, 0, 0], cfg.analysis_window()[0])


def test_frame_count():
    spec = stft(MultichannelSignal(np.zeros(16000), 16000), CFG)
    # ceil(16000 / 160) = 100 frames plus the padding at both edges
    assert spec.n_frames == CFG.n_frames(16000) == 103
    assert spec.n_bins == 257


def test_frame_layout():
    # frame l starts at l*hop - (K - hop) in the unpadded signal
    rng = np.random.default_rng(0)
    x = rng.standard_normal(3000)
    spec = stft(MultichannelSignal(x, 16000), CFG)
    l = 7
    start = l * CFG.hop - CFG.pad
    frame = x[start:start + CFG.fft_size] * CFG.analysis_window()
    assert np.allclose(spec.coeffs[:, l, 0], np.fft.rfft(frame))


@pytest.mark.parametrize("window,hop", [("hann", 160), ("hann", 256), ("sqrt_hann", 256), ("rect", 512)])
def test_round_trip(window, hop):
    cfg = StftConfig(512, hop, window)
    x = np.random.default_rng(1).standard_normal((3, 16000))
    y = istft(stft(MultichannelSignal(x, 16000), cfg)).samples
    assert y.shape == x.shape
    assert np.max(np.abs(y - x)) <= 1e-6


def test_single_bin_tone():
    cfg = StftConfig(64, 16)
    n_frames, b, amp = 40, 5, 3.0
    l = np.arange(n_frames)
    coeffs = np.zeros((cfg.n_bins, n_frames), dtype=complex)
    coeffs[b] = amp * np.exp(2j * np.pi * b * (l * cfg.hop - cfg.pad) / cfg.fft_size)
    spec = SpectrogramTensor(coeffs, cfg, 16000)
    y = istft(spec).samples[0]
    t = np.arange(y.size)
    # each frame holds an unwindowed cosine, so synthesis scales it by sum(w) / sum(w^2) = 2 / 1.5
    win = cfg.analysis_window()
    gain = win.sum() / np.sum(win**2)
    assert np.allclose(y, gain * 2 * amp / cfg.fft_size * np.cos(2 * np.pi * b * t / cfg.fft_size), atol=1e-12)


def test_parseval():
    x = np.random.default_rng(2).standard_normal(5000)
    spec = stft(MultichannelSignal(x, 16000), CFG)
    K = CFG.fft_size
    padded = np.concatenate([np.zeros(CFG.pad), x, np.zeros(K)])
    win = CFG.analysis_window()
    X = spec.coeffs[:, :, 0]
    spectral = np.abs(X[0]) ** 2 + np.abs(X[-1]) ** 2 + 2 * np.sum(np.abs(X[1:-1]) ** 2, axis=0)
    for l in range(spec.n_frames):
        e_time = np.sum((padded[l * CFG.hop:l * CFG.hop + K] * win) ** 2)
        assert abs(e_time - spectral[l] / K) <= 1e-10 * max(e_time, 1e-300)


def test_linearity():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((2, 2, 4000))
    sx = stft(MultichannelSignal(x, 16000), CFG).coeffs
    sy = stft(MultichannelSignal(y, 16000), CFG).coeffs
    sxy = stft(MultichannelSignal(2.5 * x - 0.7 * y, 16000), CFG).coeffs
    assert np.max(np.abs(sxy - (2.5 * sx - 0.7 * sy))) <= 1e-12 * np.max(np.abs(sxy))


def test_short_signal():
    with pytest.raises(ValueError, match="shorter than one frame"):
        stft(MultichannelSignal(np.zeros(100), 16000), CFG)


def test_non_ola():
    cfg = StftConfig(64, 64, "sqrt_hann")
    spec = stft(MultichannelSignal(np.ones(640), 16000), cfg)
    with pytest.raises(ValueError, match="overlap-add"):
        istft(spec)


def test_bad_config():
    with pytest.raises(ValueError):
        StftConfig(511, 160)
    with pytest.raises(ValueError):
        StftConfig(512, 0)
    with pytest.raises(ValueError):
        StftConfig(512, 160, "hamming")


@settings(max_examples=25, deadline=None)
@given(st.integers(600, 3000), st.sampled_from([64, 128, 160, 256]), st.integers(0, 2**31 - 1))
def test_round_trip_property(n, hop, seed):
    cfg = StftConfig(512, hop)
    x = np.random.default_rng(seed).uniform(-1, 1, (1, n))
    y = istft(stft(MultichannelSignal(x, 16000), cfg)).samples
    assert np.max(np.abs(y - x)) <= 1e-6
