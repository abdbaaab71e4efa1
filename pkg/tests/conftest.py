import numpy as np
import pytest

from auxive.signal_io import MultichannelSignal
from auxive.stft import SpectrogramTensor, StftConfig


def random_spec(n_bins=16, n_frames=50, n_channels=3, seed=0, super_gaussian=True):
    """Random complex tensor; frames share a random scale across bins when super_gaussian."""
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((n_bins, n_frames, n_channels)) + 1j * rng.standard_normal((n_bins, n_frames, n_channels))
    if super_gaussian:
        coeffs *= rng.gamma(0.5, 1.0, n_frames)[None, :, None] ** 0.5
    config = StftConfig(fft_size=2 * (n_bins - 1), hop=n_bins - 1)
    return SpectrogramTensor(coeffs, config, 16000)


def spec_from(coeffs):
    n_bins = coeffs.shape[0]
    return SpectrogramTensor(coeffs, StftConfig(fft_size=2 * (n_bins - 1), hop=n_bins - 1), 16000)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def noise_signal(rng):
    return MultichannelSignal(rng.uniform(-0.9, 0.9, (5, 16000)), 16000)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
