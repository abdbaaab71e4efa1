"""Seeded synthetic source signals standing in for recorded speech and ambient noise."""
import numpy as np
from scipy.signal import lfilter

from .signal_io import MultichannelSignal


def _resonator(freq: float, bandwidth: float, fs: int):
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2.0 * np.pi * freq / fs
    return [1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r]


def _talk_envelope(n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    """Talk spurts made of ~4 Hz syllables separated by pauses."""
    env = np.zeros(n)
    t = int(rng.uniform(0.0, 0.5) * fs)
    while t < n:
        spurt_end = min(n, t + int(rng.uniform(0.6, 2.5) * fs))
        while t < spurt_end:
            syl = int(rng.uniform(0.12, 0.3) * fs)
            stop = min(n, t + syl)
            shape = np.sin(np.pi * np.arange(stop - t) / syl) ** 2
            env[t:stop] += rng.lognormal(0.0, 0.5) * shape
            t += int(syl * rng.uniform(0.8, 1.1))
        t = spurt_end + int(rng.exponential(0.5) * fs + 0.1 * fs)
    return env


def synthetic_speech(duration: float, fs: int = 16000, seed: int = 0, rms: float = 0.05,
                     noise_floor_db: float = -60.0) -> MultichannelSignal:
    """Speech-like mono signal with intermittent activity and a speaker-specific spectrum.

    Voiced excitation at a random pitch passes through a per-syllable choice
    among three formant sets of the speaker, then gets modulated by a talk
    envelope. A white floor at ``noise_floor_db`` re RMS keeps every frame nonzero.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    f0 = rng.uniform(95.0, 230.0)
    vowels = [sorted(rng.uniform([250, 800, 2000], [800, 2000, 3500])) for _ in range(3)]

    t = np.arange(n) / fs
    pitch = f0 * (1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi)))
    phase = np.cumsum(pitch) / fs
    pulses = np.diff(np.floor(phase), prepend=0.0)
    excitation = pulses + 0.05 * rng.standard_normal(n)

    block = int(0.2 * fs)
    voiced = np.zeros(n)
    for start in range(0, n, block):
        stop = min(n, start + block)
        formants = vowels[rng.integers(len(vowels))]
        seg = excitation[max(0, start - 256):stop]
        y = np.zeros_like(seg)
        for f, bw in zip(formants, (80.0, 120.0, 200.0)):
            b, a = _resonator(f, bw, fs)
            y += lfilter(b, a, seg)
        voiced[start:stop] = y[-(stop - start):]

    sig = voiced * _talk_envelope(n, fs, rng)
    active = np.abs(sig) > 0
    level = np.sqrt(np.mean(sig[active] ** 2)) if np.any(active) else 1.0
    sig = sig / level * rms
    sig += rms * 10.0 ** (noise_floor_db / 20.0) * rng.standard_normal(n)
    return MultichannelSignal(sig[None, :], fs)


def synthetic_noise(duration: float, fs: int = 16000, seed: int = 0, rms: float = 0.05) -> MultichannelSignal:
    """Low-pass coloured Gaussian noise with slow level fluctuation."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    white = rng.standard_normal(n)
    # pink-ish tilt: cascade of two leaky integrators plus a little white
    colored = lfilter([1.0], [1.0, -0.95], white) + 0.3 * white
    slow = lfilter([0.002], [1.0, -0.998], rng.standard_normal(n))
    colored *= np.exp(0.5 * slow / (np.std(slow) + 1e-12) * 0.3)
    colored = colored / np.sqrt(np.mean(colored**2)) * rms
    return MultichannelSignal(colored[None, :], fs)


def laplacian_like(duration: float, fs: int = 16000, seed: int = 0, rms: float = 0.05,
                   segment: float = 0.02, shape: float = 0.3) -> MultichannelSignal:
    """Gaussian noise whose variance is redrawn from a Gamma(``shape``) law every ``segment`` seconds.

    In the STFT domain every frame is a complex Gaussian vector with a random
    shared scale, the spherically super-Gaussian source model of IVA, and
    unlike synthetic speech the source never pauses.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    seg = max(int(round(segment * fs)), 1)
    n_seg = -(-n // seg) + 1
    variances = rng.gamma(shape, 1.0, n_seg)
    # linear interpolation of the standard deviation avoids clicks at segment edges
    env = np.interp(np.arange(n) / seg, np.arange(n_seg), np.sqrt(variances))
    carrier = lfilter([1.0], [1.0, -rng.uniform(0.3, 0.8)], rng.standard_normal(n))
    sig = env * carrier
    sig = sig / np.sqrt(np.mean(sig**2)) * rms
    return MultichannelSignal(sig[None, :], fs)
