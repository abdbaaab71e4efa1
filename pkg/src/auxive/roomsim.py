"""Shoebox image-source RIRs and moving-source mixture synthesis."""
import functools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import oaconvolve

from .signal_io import MultichannelSignal

logger = logging.getLogger(__name__)

ROLES = ("SOI", "interferer", "noise")
ABSORPTION_MODELS = ("calibrated", "eyring", "sabine")

# half-length of the windowed-sinc fractional delay interpolator, in samples
SINC_HALF_WIDTH = 16


@dataclass(frozen=True)
class Room:
    dimensions: Tuple[float, float, float] = (6.0, 6.0, 3.0)
    t60: float = 0.1
    speed_of_sound: float = 343.0
    absorption_model: str = "calibrated"

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dimensions)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {self.dimensions}")
        if self.t60 < 0:
            raise ValueError("t60 must be >= 0")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")
        if self.absorption_model not in ABSORPTION_MODELS:
            raise ValueError(f"unknown absorption model {self.absorption_model!r}")
        object.__setattr__(self, "dimensions", dims)

    @property
    def volume(self) -> float:
        x, y, z = self.dimensions
        return x * y * z

    @property
    def surface(self) -> float:
        x, y, z = self.dimensions
        return 2.0 * (x * y + x * z + y * z)

    def reflection_coefficient(self, fs: int = 16000) -> float:
        """Uniform wall pressure reflection coefficient for the target T60.

        ``sabine`` and ``eyring`` use the textbook formulas. ``calibrated``
        starts from Eyring and bisects the coefficient until a reference
        image-source RIR of this room decays by 60 dB in exactly ``t60``;
        the plain formulas overestimate the decay rate of shoebox image
        models (0.136 s instead of 0.1 s for a 6 x 6 x 3 m room).
        """
        if self.t60 == 0:
            return 0.0
        k = 24.0 * np.log(10.0) * self.volume / (self.speed_of_sound * self.surface * self.t60)
        if self.absorption_model == "sabine":
            if k > 1.0:
                raise ValueError(
                    f"t60 = {self.t60} s is too small for a {self.dimensions} m room "
                    f"under Sabine's formula (absorption {k:.3f} > 1)"
                )
            return float(np.sqrt(1.0 - k))
        # Eyring: 1 - absorption = exp(-k)
        eyring = float(np.exp(-0.5 * k))
        if self.absorption_model == "eyring":
            return eyring
        return _calibrated_beta(self.dimensions, self.t60, self.speed_of_sound, int(fs), eyring)

    def contains(self, pos, margin: float = 0.0) -> bool:
        pos = np.asarray(pos, dtype=float)
        return bool(np.all(pos > margin) and np.all(pos < np.asarray(self.dimensions) - margin))


@dataclass(frozen=True)
class MicArray:
    positions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[1] != 3 or pos.shape[0] < 2:
            raise ValueError(f"need a (d >= 2, 3) position matrix, got {pos.shape}")
        object.__setattr__(self, "positions", pos)

    @property
    def n_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    @classmethod
    def linear(
        cls,
        center=(3.0, 2.74),
        n_mics: int = 5,
        spacing: float = 0.05,
        rotation_deg: float = 45.0,
        height: float = 1.5,
    ) -> "MicArray":
        """Uniform linear array in the horizontal plane, axis rotated counter-clockwise from +x."""
        theta = np.deg2rad(rotation_deg)
        offsets = (np.arange(n_mics) - (n_mics - 1) / 2.0) * spacing
        xy = np.asarray(center[:2], dtype=float) + offsets[:, None] * np.array([np.cos(theta), np.sin(theta)])
        return cls(np.column_stack([xy, np.full(n_mics, height)]))


@dataclass(frozen=True)
class Trajectory:
    """Static point or back-and-forth travel along a horizontal circular arc.

    For ``semicircle`` the source starts at ``start_angle`` on the circle of
    ``radius`` around ``anchor`` and moves towards ``end_angle`` at ``speed``,
    reversing direction at either end.
    """

    kind: str = "static"
    anchor: Tuple[float, float] = (3.0, 3.0)
    radius: float = 0.0
    speed: float = 0.0
    start_angle: float = 0.0
    end_angle: float = np.pi
    height: float = 1.5

    def __post_init__(self):
        if self.kind not in ("static", "semicircle"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if self.kind == "semicircle" and self.radius <= 0:
            raise ValueError("semicircle radius must be positive")
        object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor[:2]))

    @classmethod
    def static(cls, x: float, y: float, height: float = 1.5) -> "Trajectory":
        return cls("static", (x, y), height=height)

    def position_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "static" or self.speed == 0:
            angle = np.full(t.shape, self.start_angle)
            if self.kind == "static":
                xy = np.broadcast_to(np.asarray(self.anchor), (t.size, 2))
                return np.column_stack([xy, np.full(t.size, self.height)])
        else:
            span = abs(self.end_angle - self.start_angle)
            direction = np.sign(self.end_angle - self.start_angle) or 1.0
            travelled = self.speed * t / self.radius
            # triangle wave in [0, span]
            phase = np.mod(travelled, 2.0 * span)
            offset = np.where(phase <= span, phase, 2.0 * span - phase)
            angle = self.start_angle + direction * offset
        x = self.anchor[0] + self.radius * np.cos(angle)
        y = self.anchor[1] + self.radius * np.sin(angle)
        return np.column_stack([x, y, np.full(t.size, self.height)])


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int


@dataclass
class SourceSpec:
    stem: MultichannelSignal
    trajectory: Trajectory
    role: str = "interferer"
    gain_db: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.stem.n_channels != 1:
            raise ValueError("source stems must be single-channel")
        if self.role not in ROLES:
            raise ValueError(f"unknown source role {self.role!r}, expected one of {ROLES}")


@dataclass
class Scenario:
    room: Room
    mics: MicArray
    sources: List[SourceSpec]
    segment_len: float = 0.128
    crossfade: float = 0.032
    noise_level_db: Optional[float] = -10.0
    rir_len: Optional[int] = None

    def __post_init__(self):
        n_soi = sum(src.role == "SOI" for src in self.sources)
        if n_soi != 1:
            raise ValueError(f"a scenario needs exactly one SOI, got {n_soi}")
        for pos in self.mics.positions:
            if not self.room.contains(pos):
                raise ValueError(f"microphone at {pos} lies outside the room")

    @property
    def sample_rate(self) -> int:
        return self.sources[0].stem.sample_rate

    @property
    def soi_index(self) -> int:
        return next(i for i, s in enumerate(self.sources) if s.role == "SOI")


def default_rir_len(room: Room, fs: int) -> int:
    """Taps covering 1.5 T60, and at least the longest direct path in the room."""
    diag = np.linalg.norm(room.dimensions) / room.speed_of_sound * fs
    return max(int(np.ceil(1.5 * room.t60 * fs)), int(np.ceil(diag)) + 2 * SINC_HALF_WIDTH)


@functools.lru_cache(maxsize=64)
def _calibrated_beta(dims: tuple, t60: float, c: float, fs: int, start: float) -> float:
    L = np.asarray(dims)
    src = np.array([0.37, 0.43, 0.41]) * L
    mic = np.array([0.61, 0.58, 0.55]) * L
    n_taps = int(np.ceil(2.0 * t60 * fs)) + 1

    def decay(beta):
        taps = _image_source(L, c, beta, src, mic[None, :], fs, n_taps)[0]
        return decay_time(taps, fs)

    lo, hi = 0.0, start
    if decay(hi) <= t60:
        return start
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if decay(mid) > t60:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _check_inside(room: Room, pos, what: str) -> None:
    if not room.contains(pos):
        raise ValueError(f"{what} at {np.round(pos, 4).tolist()} lies outside the room {room.dimensions}")


@functools.lru_cache(maxsize=8192)
def _rir_bank_cached(room: Room, src: tuple, mics: tuple, fs: int, max_len: int) -> np.ndarray:
    return _image_source(np.asarray(room.dimensions), room.speed_of_sound, room.reflection_coefficient(fs),
                         np.array(src), np.array(mics).reshape(-1, 3), fs, max_len)


def _image_source(L: np.ndarray, c: float, beta: float, src: np.ndarray, mics: np.ndarray,
                  fs: int, max_len: int) -> np.ndarray:
    max_dist = max_len / fs * c + np.linalg.norm(L)

    if beta == 0.0:
        orders = [np.zeros(1, dtype=int)] * 3
    else:
        orders = [np.arange(-int(np.ceil(max_dist / (2 * Li))) - 1, int(np.ceil(max_dist / (2 * Li))) + 2) for Li in L]
    n = np.stack(np.meshgrid(*orders, indexing="ij"), axis=-1).reshape(-1, 3)
    q = np.stack(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"), axis=-1).reshape(-1, 3)
    n = np.repeat(n, len(q), axis=0)
    q = np.tile(q, (len(orders[0]) * len(orders[1]) * len(orders[2]), 1))
    if beta == 0.0:
        n, q = n[:1], q[:1]

    images = (1 - 2 * q) * src + 2 * n * L  # (n_img, 3)
    n_reflect = np.sum(np.abs(n - q) + np.abs(n), axis=1)
    refl_gain = beta**n_reflect if beta > 0 else (n_reflect == 0).astype(float)

    W = SINC_HALF_WIDTH
    offsets = np.arange(-W + 1, W + 1)  # taps around floor(delay)
    taps = np.zeros((len(mics), max_len))
    for m, mic in enumerate(mics):
        dist = np.linalg.norm(images - mic, axis=1)
        delay = dist / c * fs
        keep = (delay < max_len) & (refl_gain > 0)
        delay, dist, g = delay[keep], dist[keep], refl_gain[keep]
        amp = g / (4.0 * np.pi * dist)
        base = np.floor(delay).astype(int)
        idx = base[:, None] + offsets[None, :]
        t = idx - delay[:, None]
        # Hann-windowed sinc centered on the exact delay
        kernel = np.sinc(t) * 0.5 * (1.0 + np.cos(np.pi * t / W))
        kernel[np.abs(t) >= W] = 0.0
        valid = (idx >= 0) & (idx < max_len)
        np.add.at(taps[m], idx[valid], (amp[:, None] * kernel)[valid])
    return taps


def image_source_rir(room: Room, src, mic, fs: int, max_len: Optional[int] = None) -> Rir:
    """Image-source RIR between two points with a fractional-delay interpolator."""
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    _check_inside(room, src, "source")
    _check_inside(room, mic, "microphone")
    if np.allclose(src, mic):
        raise ValueError("source and microphone coincide")
    if max_len is None:
        max_len = default_rir_len(room, fs)
    room.reflection_coefficient(fs)
    taps = _rir_bank_cached(room, tuple(src.tolist()), tuple(mic.tolist()), int(fs), int(max_len))[0]
    return Rir(taps.copy(), int(fs))


def rir_bank(room: Room, src, mics: MicArray, fs: int, max_len: Optional[int] = None) -> np.ndarray:
    """RIRs from one source position to every microphone, shape (d, max_len)."""
    src = np.asarray(src, dtype=float)
    _check_inside(room, src, "source")
    if max_len is None:
        max_len = default_rir_len(room, fs)
    room.reflection_coefficient(fs)
    key = tuple(np.round(src, 9).tolist())
    return _rir_bank_cached(room, key, tuple(mics.positions.ravel().tolist()), int(fs), int(max_len))


def schroeder_curve(taps: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay in dB, normalized to 0 dB at the first tap."""
    energy = np.cumsum(taps[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def decay_time(taps: np.ndarray, fs: int, level_db: float = -60.0) -> float:
    """Time from the direct-path peak until the Schroeder curve falls below ``level_db``."""
    start = int(np.argmax(np.abs(taps)))
    edc = schroeder_curve(taps[start:])
    below = np.flatnonzero(edc <= level_db)
    if below.size == 0:
        return np.inf
    return below[0] / fs


def sample_trajectory(traj: Trajectory, duration: float, segment_len: float, room: Optional[Room] = None) -> np.ndarray:
    """Source position at the start of every segment, shape (n_segments, 3)."""
    if segment_len <= 0:
        raise ValueError("segment_len must be positive")
    n_seg = max(int(np.ceil(duration / segment_len - 1e-9)), 1)
    positions = traj.position_at(np.arange(n_seg) * segment_len)
    if room is not None:
        for pos in positions:
            if not room.contains(pos):
                raise ValueError(f"trajectory leaves the room at {np.round(pos, 4).tolist()}")
    return positions


def crossfade_gains(n_samples: int, seg: int, fade: int) -> np.ndarray:
    """Per-segment linear crossfade gains, shape (n_segments, n_samples).

    Adjacent gains ramp across ``fade`` samples centered on each segment
    boundary and sum to one at every sample.
    """
    n_seg = max(-(-n_samples // seg), 1)
    t = np.arange(n_samples, dtype=float)
    ramps = np.ones((n_seg + 1, n_samples))
    ramps[n_seg] = 0.0
    for j in range(1, n_seg):
        if fade > 0:
            ramps[j] = np.clip((t - (j * seg - fade / 2.0)) / fade, 0.0, 1.0)
        else:
            ramps[j] = (t >= j * seg).astype(float)
    return ramps[:-1] - ramps[1:]


def render_source(src: SourceSpec, room: Room, mics: MicArray, segment_len: float,
                  crossfade: float, rir_len: Optional[int] = None) -> np.ndarray:
    """Microphone image of one source (before gains), shape (d, n_samples)."""
    fs = src.stem.sample_rate
    x = src.stem.samples[0]
    N = x.size
    if rir_len is None:
        rir_len = default_rir_len(room, fs)
    out = np.zeros((mics.n_mics, N))
    moving = src.trajectory.kind != "static" and src.trajectory.speed > 0

    if not moving:
        pos = src.trajectory.position_at(0.0)[0]
        h = rir_bank(room, pos, mics, fs, rir_len)
        return oaconvolve(x[None, :], h, axes=1)[:, :N]

    seg = int(round(segment_len * fs))
    fade = int(round(crossfade * fs))
    positions = sample_trajectory(src.trajectory, N / fs, seg / fs, room)
    gains = crossfade_gains(N, seg, fade)
    for j, pos in enumerate(positions):
        support = np.flatnonzero(gains[j])
        if support.size == 0:
            continue
        lo, hi = support[0], support[-1] + 1
        h = rir_bank(room, pos, mics, fs, rir_len)
        piece = oaconvolve((x[lo:hi] * gains[j, lo:hi])[None, :], h, axes=1)
        stop = min(N, lo + piece.shape[1])
        out[:, lo:stop] += piece[:, : stop - lo]
    return out


def synth_mixture(scenario: Scenario) -> Tuple[MultichannelSignal, List[MultichannelSignal]]:
    """Convolutive mixture and the per-source microphone images.

    Sources keep their native level scaled by ``gain_db``; when
    ``noise_level_db`` is set, noise sources are rescaled jointly so that
    their summed image energy sits that many dB relative to the summed
    speech images.
    """
    fs = scenario.sample_rate
    lengths = {s.stem.n_samples for s in scenario.sources}
    if any(s.stem.sample_rate != fs for s in scenario.sources):
        raise ValueError("all stems must share one sample rate")
    if len(lengths) != 1:
        raise ValueError(f"stems have different lengths {sorted(lengths)}")

    images = []
    for src in scenario.sources:
        img = render_source(src, scenario.room, scenario.mics, scenario.segment_len,
                            scenario.crossfade, scenario.rir_len)
        images.append(img * 10.0 ** (src.gain_db / 20.0))

    noise_idx = [i for i, s in enumerate(scenario.sources) if s.role == "noise"]
    if noise_idx and scenario.noise_level_db is not None:
        speech = sum(images[i] for i in range(len(images)) if i not in noise_idx)
        noise = sum(images[i] for i in noise_idx)
        e_speech = np.sum(np.square(speech))
        e_noise = np.sum(np.square(noise))
        if e_noise > 0:
            g = np.sqrt(e_speech / e_noise * 10.0 ** (scenario.noise_level_db / 10.0))
            for i in noise_idx:
                images[i] = images[i] * g

    mixture = np.zeros_like(images[0])
    for img in images:
        mixture = mixture + img
    return MultichannelSignal(mixture, fs), [MultichannelSignal(img, fs) for img in images]
