"""WAV and score-table input/output."""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
from scipy.io import wavfile

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class MultichannelSignal:
    """Time-domain samples, shape (n_channels, n_samples), values nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise ValueError(f"samples must be (channels, time), got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class ScoreTable:
    """Per-frame speaker scores; ``scores`` has shape (n_frames, n_speakers)."""

    frame_index: np.ndarray
    scores: np.ndarray
    speaker_ids: List[str]

    def __post_init__(self):
        frame_index = np.asarray(self.frame_index, dtype=int)
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 2 or scores.shape[0] == 0:
            raise ValueError("empty score table")
        if scores.shape != (frame_index.size, len(self.speaker_ids)):
            raise ValueError(
                f"score matrix shape {scores.shape} does not match "
                f"{frame_index.size} frames x {len(self.speaker_ids)} speakers"
            )
        if np.any(np.diff(frame_index) <= 0):
            raise ValueError("frame indices must be strictly increasing")
        if not np.all(np.isfinite(scores)):
            raise ValueError("score table contains non-finite values")
        object.__setattr__(self, "frame_index", frame_index)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "speaker_ids", list(self.speaker_ids))

    @property
    def n_frames(self) -> int:
        return self.scores.shape[0]

    def column(self, speaker_id: str) -> np.ndarray:
        try:
            j = self.speaker_ids.index(speaker_id)
        except ValueError:
            raise KeyError(f"speaker {speaker_id!r} not in score table {self.speaker_ids}") from None
        return self.scores[:, j]


_INT_SCALE = {np.dtype("int16"): 2.0**15, np.dtype("int32"): 2.0**31}


def read_wav(path: PathLike) -> MultichannelSignal:
    """Read a PCM (16/24/32-bit) or IEEE float WAV file.

    Integer samples are divided by the full-scale value of their container,
    so the result lies in [-1, 1). 24-bit files are delivered by scipy as
    left-justified int32 and share the 32-bit scale.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot read WAV file {path}: {exc}") from exc

    if data.dtype in _INT_SCALE:
        samples = data.astype(float) / _INT_SCALE[data.dtype]
    elif data.dtype.kind == "f":
        samples = data.astype(float)
    else:
        raise ValueError(f"unsupported WAV sample encoding {data.dtype} in {path}")

    if samples.ndim == 1:
        samples = samples[None, :]
    else:
        samples = samples.T
    if samples.shape[1] == 0:
        raise ValueError(f"zero-length audio in {path}")
    return MultichannelSignal(samples, rate)


def write_wav(signal: MultichannelSignal, path: PathLike, encoding: str = "pcm16") -> None:
    """Write ``signal`` as 16-bit PCM (default) or 32-bit float.

    Samples outside [-1, 1] are clipped and a warning is logged.
    """
    path = Path(path)
    x = signal.samples
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        logger.warning("clipping %d samples exceeding full scale (peak %.3f) in %s",
                       int(np.sum(np.abs(x) > 1.0)), peak, path)
        x = np.clip(x, -1.0, 1.0)

    if encoding == "pcm16":
        data = np.clip(np.round(x * 2.0**15), -(2**15), 2**15 - 1).astype(np.int16)
    elif encoding == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV encoding {encoding!r}")

    data = data[0] if data.shape[0] == 1 else data.T
    try:
        wavfile.write(path, signal.sample_rate, np.ascontiguousarray(data))
    except OSError as exc:
        raise OSError(f"cannot write WAV file {path}: {exc}") from exc


def read_score_table(path: PathLike) -> ScoreTable:
    """Read a comma-separated score table with header ``frame,<id1>,<id2>,...``."""
    path = Path(path)
    with open(path, newline="") as f:
        rows = [row for row in csv.reader(f) if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ValueError(f"empty score table {path}")
    header = [cell.strip() for cell in rows[0]]
    if len(header) < 2 or header[0] != "frame":
        raise ValueError(f"score table header must be 'frame,<id1>,...', got {header}")
    speaker_ids = header[1:]
    if len(set(speaker_ids)) != len(speaker_ids):
        raise ValueError(f"duplicate speaker labels in header {speaker_ids}")
    body = rows[1:]
    if not body:
        raise ValueError(f"empty score table {path}")

    frames = []
    scores = []
    for i, row in enumerate(body):
        if len(row) != len(header) or any(cell.strip() == "" for cell in row):
            raise ValueError(f"ragged row at frame {i}")
        try:
            frames.append(int(row[0]))
            scores.append([float(cell) for cell in row[1:]])
        except ValueError:
            raise ValueError(f"non-numeric cell at frame {i}") from None
    return ScoreTable(np.array(frames), np.array(scores), speaker_ids)


def write_score_table(table: ScoreTable, path: PathLike) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["frame", *table.speaker_ids])
        for idx, row in zip(table.frame_index, table.scores):
            writer.writerow([int(idx), *(repr(float(v)) for v in row)])


def mono(samples: Sequence[float], sample_rate: int) -> MultichannelSignal:
    return MultichannelSignal(np.asarray(samples, dtype=float)[None, :], sample_rate)
