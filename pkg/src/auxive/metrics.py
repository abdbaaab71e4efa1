"""SNR improvement, SOI attenuation and fail-rate statistics.

The output SNR is measured by pushing each source's microphone image through
the same time-varying extraction operator that produced the output; for a
linear extractor the per-source contributions add up to the output exactly.
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

from .core import DemixHistory, apply_history
from .stft import SpectrogramTensor

DB_CAP = 60.0
FAIL_THRESHOLD_DB = 1.0
SILENCE_FLOOR_DB = -40.0


@dataclass
class EvalReport:
    input_snr_db: float
    output_snr_db: float
    isnr_db: float
    failed: bool
    attenuation_trace: np.ndarray = field(repr=False)
    isnr_trace: np.ndarray = field(repr=False)

    @property
    def attenuation_variance(self) -> float:
        return attenuation_variance(self.attenuation_trace)


def _db_ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 10.0 * np.log10(num / den)
    return out


def _snr_difference(out_db, in_db):
    with np.errstate(invalid="ignore"):
        diff = np.asarray(out_db - in_db, dtype=float)
    # both sides infinite in the same direction: no measurable change
    return np.clip(np.nan_to_num(diff, nan=0.0), -DB_CAP, DB_CAP)


def decompose_output(history: DemixHistory, image_specs: Sequence[SpectrogramTensor]) -> List[SpectrogramTensor]:
    """Per-source contributions to the extracted output (mono spectrograms)."""
    out = []
    for spec in image_specs:
        if history.n_states and history.filters.shape[1:] != (spec.n_bins, spec.n_channels):
            raise ValueError(
                f"history operators {history.filters.shape[1:]} do not fit a "
                f"{spec.n_bins}-bin, {spec.n_channels}-channel image"
            )
        out.append(spec.with_coeffs(apply_history(spec.coeffs, history)[:, :, None]))
    return out


def _frame_energy(spec: SpectrogramTensor, channel: int) -> np.ndarray:
    return np.sum(np.abs(spec.coeffs[:, :, channel]) ** 2, axis=0)


def _moving_sum(x: np.ndarray, width: int) -> np.ndarray:
    return np.convolve(x, np.ones(width), mode="same")


@dataclass
class SnrResult:
    input_snr_db: float
    output_snr_db: float
    isnr_db: float
    isnr_trace: np.ndarray


def isnr(
    contributions: Sequence[SpectrogramTensor],
    soi_index: int,
    image_specs: Sequence[SpectrogramTensor],
    reference_channel: int = 0,
    window_frames: int = 100,
) -> SnrResult:
    """Input, output and improvement SNR with every non-SOI source counted as noise.

    ``isnr_trace`` repeats the computation over a centered window of
    ``window_frames`` frames.
    """
    if len(contributions) != len(image_specs):
        raise ValueError("need one contribution per source image")
    soi_in = _frame_energy(image_specs[soi_index], reference_channel)
    soi_out = _frame_energy(contributions[soi_index], 0)
    if soi_in.sum() == 0:
        raise ValueError("SOI image has zero energy")

    ref_others = sum(image_specs[j].coeffs[:, :, reference_channel]
                     for j in range(len(image_specs)) if j != soi_index)
    out_others = sum(contributions[j].coeffs[:, :, 0]
                     for j in range(len(contributions)) if j != soi_index)
    noise_in = np.sum(np.abs(ref_others) ** 2, axis=0) if len(image_specs) > 1 else np.zeros_like(soi_in)
    noise_out = np.sum(np.abs(out_others) ** 2, axis=0) if len(image_specs) > 1 else np.zeros_like(soi_in)

    in_db = _db_ratio(soi_in.sum(), noise_in.sum())
    out_db = _db_ratio(soi_out.sum(), noise_out.sum())
    improvement = float(_snr_difference(out_db, in_db))

    w = max(1, min(window_frames, soi_in.size))
    trace = _snr_difference(
        _db_ratio(_moving_sum(soi_out, w), _moving_sum(noise_out, w)),
        _db_ratio(_moving_sum(soi_in, w), _moving_sum(noise_in, w)),
    )
    return SnrResult(
        float(np.clip(in_db, -DB_CAP, DB_CAP)),
        float(np.clip(np.nan_to_num(out_db, nan=-DB_CAP), -DB_CAP, DB_CAP)),
        improvement,
        trace,
    )


def attenuation_trace(
    s_hat: SpectrogramTensor,
    soi_image_ref: SpectrogramTensor,
    floor_db: float = SILENCE_FLOOR_DB,
) -> np.ndarray:
    """Per-frame ``10 log10(sum_k |s_hat|^2 / sum_k |s|^2)``; NaN on silent SOI frames.

    A frame is silent when its SOI energy lies more than ``-floor_db`` dB
    below the median SOI frame energy.
    """
    if s_hat.n_frames != soi_image_ref.n_frames:
        raise ValueError("frame count mismatch between output and SOI image")
    e_hat = _frame_energy(s_hat, 0)
    e_soi = _frame_energy(soi_image_ref, 0)
    floor = np.median(e_soi) * 10.0 ** (floor_db / 10.0)
    defined = (e_soi > floor) & (e_soi > 0)
    trace = np.full(e_soi.shape, np.nan)
    trace[defined] = np.clip(_db_ratio(e_hat[defined], e_soi[defined]), -DB_CAP, DB_CAP)
    return trace


def attenuation_variance(trace: np.ndarray) -> float:
    defined = trace[np.isfinite(trace)]
    if defined.size == 0:
        return float("nan")
    return float(np.var(defined))


def fail_stats(reports: Sequence[Union[EvalReport, float]], threshold: float = FAIL_THRESHOLD_DB) -> float:
    """Fraction of runs whose iSNR falls below ``threshold`` dB."""
    if len(reports) == 0:
        raise ValueError("fail_stats needs at least one report")
    values = np.array([r.isnr_db if isinstance(r, EvalReport) else float(r) for r in reports])
    return float(np.mean(values < threshold))


def evaluate(
    history: DemixHistory,
    mixture_spec: SpectrogramTensor,
    image_specs: Sequence[SpectrogramTensor],
    soi_index: int,
    reference_channel: int = 0,
    fail_threshold: float = FAIL_THRESHOLD_DB,
    window_frames: int = 100,
) -> EvalReport:
    """Full report for one extraction run."""
    contributions = decompose_output(history, image_specs)
    snr = isnr(contributions, soi_index, image_specs, reference_channel, window_frames)
    s_hat = mixture_spec.with_coeffs(apply_history(mixture_spec.coeffs, history)[:, :, None])
    att = attenuation_trace(s_hat, image_specs[soi_index].channel(reference_channel))
    return EvalReport(
        input_snr_db=snr.input_snr_db,
        output_snr_db=snr.output_snr_db,
        isnr_db=snr.isnr_db,
        failed=snr.isnr_db < fail_threshold,
        attenuation_trace=att,
        isnr_trace=snr.isnr_trace,
    )
