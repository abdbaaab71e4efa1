"""Per-frame pilot signals marking where the SOI dominates the mixture.

Every pilot is either 0 or the mixture frame energy ``sum_k |X_k|^2`` at the
reference channel, so it enters the auxiliary variable in the same units as
the extracted-signal energy.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import PilotSignal
from .signal_io import ScoreTable
from .stft import SpectrogramTensor


@dataclass(frozen=True)
class OraclePilotParams:
    threshold: float = 0.5

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("oracle threshold must be positive")


@dataclass(frozen=True)
class ScorePilotParams:
    soi_speaker: str
    threshold: float = float(np.exp(-5.0))

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("score threshold must be positive")


@dataclass(frozen=True)
class CorruptionParams:
    dominant_accuracy: float = 0.624
    nonactive_dominant_rate: float = 0.217
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("dominant_accuracy", "nonactive_dominant_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")


def frame_energy(spec: SpectrogramTensor, channel: int = 0) -> np.ndarray:
    """sum_k |X_{k,l}|^2 per frame for one channel."""
    return np.sum(np.abs(spec.coeffs[:, :, channel]) ** 2, axis=0)


def _check_frames(n_frames: int, *specs: SpectrogramTensor) -> None:
    for s in specs:
        if s.n_frames != n_frames:
            raise ValueError(f"frame count mismatch: {s.n_frames} != {n_frames}")


def dominance_mask(
    soi_image_spec: SpectrogramTensor,
    other_image_specs: Sequence[SpectrogramTensor],
    threshold: float,
    channel: int = 0,
) -> np.ndarray:
    """Frames where SOI energy / summed interference energy >= threshold.

    Frames without interference energy count as dominant when the SOI is
    present; frames without SOI energy never do.
    """
    n_frames = soi_image_spec.n_frames
    _check_frames(n_frames, *other_image_specs)
    e_soi = frame_energy(soi_image_spec, channel)
    e_other = np.zeros(n_frames)
    for spec in other_image_specs:
        e_other += frame_energy(spec, channel)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(e_other > 0, e_soi / np.where(e_other > 0, e_other, 1.0), np.inf)
    return (e_soi > 0) & (ratio >= threshold)


def _pilot_from_mask(mask: np.ndarray, mixture_spec: SpectrogramTensor, channel: int) -> PilotSignal:
    return PilotSignal(np.where(mask, frame_energy(mixture_spec, channel), 0.0))


def oracle_pilot(
    soi_image_spec: SpectrogramTensor,
    other_image_specs: Sequence[SpectrogramTensor],
    mixture_spec: SpectrogramTensor,
    params: OraclePilotParams = OraclePilotParams(),
    channel: int = 0,
) -> PilotSignal:
    """Energy-ratio pilot computed from the true source images."""
    _check_frames(mixture_spec.n_frames, soi_image_spec)
    mask = dominance_mask(soi_image_spec, other_image_specs, params.threshold, channel)
    return _pilot_from_mask(mask, mixture_spec, channel)


def score_pilot(
    table: ScoreTable,
    mixture_spec: SpectrogramTensor,
    params: ScorePilotParams,
    channel: int = 0,
) -> PilotSignal:
    """Pilot from per-frame speaker scores.

    A frame is active when the SOI score exceeds the best competing
    speaker's score by at least ``log(threshold)``, i.e. the ratio of
    exponentiated scores is at least ``threshold``.
    """
    if params.soi_speaker not in table.speaker_ids:
        raise KeyError(f"SOI speaker {params.soi_speaker!r} not in score table {table.speaker_ids}")
    if table.n_frames != mixture_spec.n_frames:
        raise ValueError(
            f"score table has {table.n_frames} frames, spectrogram has {mixture_spec.n_frames}"
        )
    others = [s for s in table.speaker_ids if s != params.soi_speaker]
    if not others:
        raise ValueError("score table needs at least one speaker besides the SOI")
    soi = table.column(params.soi_speaker)
    best_other = np.max(np.column_stack([table.column(s) for s in others]), axis=1)
    mask = soi - best_other >= np.log(params.threshold)
    return _pilot_from_mask(mask, mixture_spec, channel)


def corrupt_mask(mask: np.ndarray, corruption: CorruptionParams) -> np.ndarray:
    """Keep dominant frames with probability p_acc, add false ones with probability p_na."""
    rng = np.random.default_rng(corruption.rng_seed)
    u = rng.random(mask.size)
    keep = u < corruption.dominant_accuracy
    false_alarm = u < corruption.nonactive_dominant_rate
    return np.where(mask, keep, false_alarm)


def corrupted_oracle_pilot(
    soi_image_spec: SpectrogramTensor,
    other_image_specs: Sequence[SpectrogramTensor],
    mixture_spec: SpectrogramTensor,
    oracle_params: OraclePilotParams = OraclePilotParams(),
    corruption: CorruptionParams = CorruptionParams(),
    channel: int = 0,
) -> PilotSignal:
    """Oracle pilot degraded to imitate an imperfect dominant-speaker detector."""
    _check_frames(mixture_spec.n_frames, soi_image_spec)
    mask = dominance_mask(soi_image_spec, other_image_specs, oracle_params.threshold, channel)
    return _pilot_from_mask(corrupt_mask(mask, corruption), mixture_spec, channel)
