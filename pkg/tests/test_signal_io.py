import logging

import numpy as np
import pytest
from scipy.io import wavfile

from auxive.signal_io import (MultichannelSignal, ScoreTable, mono, read_score_table, read_wav,
                              write_score_table, write_wav)


def test_silence_file(tmp_path):
    path = tmp_path / "silence.wav"
    wavfile.write(path, 16000, np.zeros(16000, dtype=np.int16))
    sig = read_wav(path)
    assert sig.n_channels == 1
    assert sig.n_samples == 16000
    assert sig.sample_rate == 16000
    assert np.all(sig.samples == 0)


def test_five_channel_file(tmp_path, noise_signal):
    path = tmp_path / "five.wav"
    write_wav(noise_signal, path)
    sig = read_wav(path)
    assert sig.samples.shape == (5, 16000)
    assert sig.sample_rate == 16000


def test_pcm16_round_trip_bound(tmp_path, noise_signal):
    path = tmp_path / "noise.wav"
    write_wav(noise_signal, path)
    err = np.max(np.abs(read_wav(path).samples - noise_signal.samples))
    assert err <= 2.0**-15


def test_sine_round_trip(tmp_path):
    t = np.arange(16000) / 16000
    sig = mono(0.5 * np.sin(2 * np.pi * 440 * t), 16000)
    write_wav(sig, tmp_path / "sine.wav")
    assert np.max(np.abs(read_wav(tmp_path / "sine.wav").samples - sig.samples)) <= 2.0**-15


def test_float32_round_trip(tmp_path, noise_signal):
    write_wav(noise_signal, tmp_path / "f.wav", encoding="float32")
    back = read_wav(tmp_path / "f.wav")
    assert np.max(np.abs(back.samples - noise_signal.samples)) < 1e-7


def test_zero_signal_writes_zeros(tmp_path):
    write_wav(mono(np.zeros(100), 16000), tmp_path / "z.wav")
    _, data = wavfile.read(tmp_path / "z.wav")
    assert np.all(data == 0)


def test_clipping_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        write_wav(mono([1.5, -2.0, 0.25], 16000), tmp_path / "c.wav", encoding="float32")
    assert "clipping" in caplog.text
    assert np.allclose(read_wav(tmp_path / "c.wav").samples, [[1.0, -1.0, 0.25]])


def test_full_scale_pcm16(tmp_path):
    write_wav(mono([1.0, -1.0], 16000), tmp_path / "fs.wav")
    back = read_wav(tmp_path / "fs.wav").samples[0]
    assert back[1] == -1.0
    assert abs(back[0] - 1.0) == 2.0**-15


def test_int32_scaling(tmp_path):
    wavfile.write(tmp_path / "i32.wav", 16000, np.array([2**30, -(2**31)], dtype=np.int32))
    assert np.allclose(read_wav(tmp_path / "i32.wav").samples, [[0.5, -1.0]])


def test_unsupported_encoding(tmp_path):
    wavfile.write(tmp_path / "u8.wav", 16000, np.array([0, 128, 255], dtype=np.uint8))
    with pytest.raises(ValueError, match="unsupported"):
        read_wav(tmp_path / "u8.wav")


def test_zero_length(tmp_path):
    wavfile.write(tmp_path / "empty.wav", 16000, np.zeros(0, dtype=np.int16))
    with pytest.raises(ValueError, match="zero-length"):
        read_wav(tmp_path / "empty.wav")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "nope.wav")


def test_signal_validation():
    with pytest.raises(ValueError):
        MultichannelSignal(np.zeros((2, 2, 2)), 16000)
    with pytest.raises(ValueError):
        MultichannelSignal(np.zeros((1, 4)), 0)
    with pytest.raises(ValueError):
        MultichannelSignal(np.array([[np.nan]]), 16000)


def test_score_table_shape(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("frame,F01,F06,M04,M05\n0,1.0,2.0,3.0,4.0\n1,-1,-2,-3,-4\n")
    table = read_score_table(path)
    assert table.scores.shape == (2, 4)
    assert table.speaker_ids == ["F01", "F06", "M04", "M05"]
    assert np.allclose(table.column("M04"), [3.0, -3.0])


def test_score_table_column_order(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("frame,M05,F01\n0,1,2\n")
    assert read_score_table(path).speaker_ids == ["M05", "F01"]


def test_score_table_ragged(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("frame,F01,F06\n0,1,2\n1,3\n")
    with pytest.raises(ValueError, match="ragged row at frame 1"):
        read_score_table(path)


def test_score_table_empty_cell(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("frame,F01,F06\n0,,2\n")
    with pytest.raises(ValueError, match="ragged row at frame 0"):
        read_score_table(path)


def test_score_table_non_numeric(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("frame,F01\n0,abc\n")
    with pytest.raises(ValueError, match="non-numeric cell at frame 0"):
        read_score_table(path)


def test_score_table_empty(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("frame,F01\n")
    with pytest.raises(ValueError, match="empty score table"):
        read_score_table(path)


def test_score_table_round_trip(tmp_path):
    table = ScoreTable(np.arange(3), np.array([[0.1, -2.5], [1e-9, 3.0], [7.0, 0.0]]), ["a", "b"])
    write_score_table(table, tmp_path / "s.csv")
    back = read_score_table(tmp_path / "s.csv")
    assert back.speaker_ids == ["a", "b"]
    assert np.array_equal(back.scores, table.scores)


def test_missing_speaker():
    table = ScoreTable([0], [[1.0]], ["a"])
    with pytest.raises(KeyError):
        table.column("b")
