"""Piloted online independent vector extraction with a moving-source room simulator."""
from .core import AuxiveParams, DemixHistory, DemixState, PilotSignal, extract, run
from .signal_io import MultichannelSignal, ScoreTable, read_score_table, read_wav, write_wav
from .stft import SpectrogramTensor, StftConfig, istft, stft

__version__ = "0.1.0"

__all__ = [
    "AuxiveParams", "DemixHistory", "DemixState", "PilotSignal", "extract", "run",
    "MultichannelSignal", "ScoreTable", "read_score_table", "read_wav", "write_wav",
    "SpectrogramTensor", "StftConfig", "istft", "stft",
]
