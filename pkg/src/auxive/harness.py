"""Scenario synthesis, pilot construction, extraction and evaluation driven by a config."""
import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import core, metrics, pilot as pilots, roomsim, stems
from .config import ExperimentConfig, from_dict, resolve
from .signal_io import MultichannelSignal, read_score_table, read_wav, write_wav
from .stft import SpectrogramTensor, StftConfig, istft, stft

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "AUXIVE_OUTPUT_DIR"

SUMMARY_FIELDS = ["run_id", "mode", "pilot", "is_position", "seed", "input_snr_db", "output_snr_db",
                  "isnr_db", "attenuation_var_db2", "fail", "error"]
TRACE_FIELDS = ["frame", "isnr_window_db", "attenuation_db", "pilot_active"]
AGGREGATE_FIELDS = ["mode", "pilot", "is_position", "n_runs", "n_errors", "mean_isnr_db", "std_isnr_db", "fail_pct"]
PILOT_LABELS = {"none": "Blind", "score_file": "XVEC", "oracle": "ORAC", "corrupted_oracle": "CORR"}
MODE_ORDER = ("online", "block_online", "batch")


class HarnessError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if not np.isfinite(value) else f"{float(value):.6f}"
    return "" if value is None else str(value)


def _csv_text(fields: Sequence[str], rows: Sequence[Dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row.get(f)) for f in fields])
    return buf.getvalue()


def _atomic_write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _atomic_wav(signal: MultichannelSignal, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".wav")
    os.close(fd)
    try:
        write_wav(signal, tmp)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def resolve_output_dir(cfg: ExperimentConfig, output_dir=None) -> Path:
    return Path(output_dir or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except HarnessError:
                raise
            except Exception as exc:
                raise HarnessError(f"{name}: {exc}") from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


def _load_stem(src_cfg, duration: Optional[float], fs: int) -> MultichannelSignal:
    stem = src_cfg.stem
    if stem.kind == "wav":
        sig = read_wav(stem.path)
        if sig.sample_rate != fs:
            raise ValueError(f"stem {stem.path} is sampled at {sig.sample_rate} Hz, expected {fs}")
        if sig.n_channels != 1:
            raise ValueError(f"stem {stem.path} has {sig.n_channels} channels, expected mono")
        return sig
    make = {"speech": stems.synthetic_speech, "laplacian": stems.laplacian_like, "noise": stems.synthetic_noise}[stem.kind]
    return make(duration, fs, seed=stem.seed, rms=stem.rms)


@_stage("room-sim")
def build_scenario(cfg: ExperimentConfig) -> roomsim.Scenario:
    sc = cfg.scenario
    fs = sc.sample_rate
    wav_lengths = []
    loaded = {}
    for i, src in enumerate(sc.sources):
        if src.stem.kind == "wav":
            loaded[i] = _load_stem(src, None, fs)
            wav_lengths.append(loaded[i].n_samples)
    if sc.duration is not None:
        n = int(round(sc.duration * fs))
        if wav_lengths and min(wav_lengths) < n:
            raise ValueError(f"wav stems are shorter ({min(wav_lengths)} samples) than the {n}-sample duration")
    else:
        n = min(wav_lengths)
    duration = n / fs

    room = roomsim.Room(tuple(sc.room.dimensions), sc.room.t60, sc.room.speed_of_sound, sc.room.absorption_model)
    m = sc.mics
    mics = roomsim.MicArray.linear(tuple(m.center), m.n_mics, m.spacing, m.rotation_deg, m.height)
    sources = []
    for i, src in enumerate(sc.sources):
        sig = loaded[i] if i in loaded else _load_stem(src, duration, fs)
        sig = MultichannelSignal(sig.samples[:, :n], fs)
        t = src.trajectory
        traj = roomsim.Trajectory(t.kind, tuple(t.anchor), t.radius, t.speed, t.start_angle, t.end_angle, t.height)
        sources.append(roomsim.SourceSpec(sig, traj, src.role, src.gain_db, src.name))
    return roomsim.Scenario(room, mics, sources, sc.segment_len, sc.crossfade, sc.noise_level_db)


_SYNTH_CACHE: Dict[str, Tuple[MultichannelSignal, List[MultichannelSignal]]] = {}


@_stage("room-sim")
def synthesize(cfg: ExperimentConfig):
    """Mixture and per-source images; identical scenarios are synthesized once per process."""
    key = json.dumps(cfg.to_dict()["scenario"], sort_keys=True)
    if key not in _SYNTH_CACHE:
        if len(_SYNTH_CACHE) > 64:
            _SYNTH_CACHE.clear()
        _SYNTH_CACHE[key] = roomsim.synth_mixture(build_scenario(cfg))
    return _SYNTH_CACHE[key]


@dataclass
class Analysis:
    mixture: SpectrogramTensor
    images: List[SpectrogramTensor]
    soi_index: int
    reference_channel: int


@_stage("stft")
def analyze(cfg: ExperimentConfig, mixture: MultichannelSignal, images: Sequence[MultichannelSignal]) -> Analysis:
    s = cfg.stft
    config = StftConfig(s.fft_size, s.hop, s.window)
    scale = s.sample_scale

    def tf(sig):
        return stft(MultichannelSignal(sig.samples * scale, sig.sample_rate), config)

    soi_index = next(i for i, src in enumerate(cfg.scenario.sources) if src.role == "SOI")
    ref = cfg.algo.reference_channel
    if ref >= mixture.n_channels:
        raise ValueError(f"reference channel {ref} out of range for {mixture.n_channels} microphones")
    return Analysis(tf(mixture), [tf(img) for img in images], soi_index, ref)


@_stage("pilot")
def build_pilot(cfg: ExperimentConfig, an: Analysis) -> Optional[core.PilotSignal]:
    p = cfg.pilot
    ref = an.reference_channel
    if p.mode == "none":
        return None
    soi = an.images[an.soi_index]
    others = [img for j, img in enumerate(an.images) if j != an.soi_index]
    if p.mode == "oracle":
        return pilots.oracle_pilot(soi, others, an.mixture, pilots.OraclePilotParams(p.nu), ref)
    if p.mode == "corrupted_oracle":
        corruption = pilots.CorruptionParams(p.dominant_accuracy, p.nonactive_dominant_rate, p.seed)
        return pilots.corrupted_oracle_pilot(soi, others, an.mixture, pilots.OraclePilotParams(p.nu), corruption, ref)
    table = read_score_table(p.score_file)
    return pilots.score_pilot(table, an.mixture, pilots.ScorePilotParams(p.soi_speaker, p.eta), ref)


def auxive_params(cfg: ExperimentConfig) -> core.AuxiveParams:
    a = cfg.algo
    return core.AuxiveParams(
        block_len=a.block_len,
        block_shift=a.block_shift,
        alpha=a.alpha,
        iterations_per_block=a.iterations_per_block,
        delta=a.delta,
        reference_channel=a.reference_channel,
        nonlinearity=core.Nonlinearity("inverse_norm", a.eps),
    )


@dataclass
class RunResult:
    config: ExperimentConfig
    report: metrics.EvalReport
    pilot: Optional[core.PilotSignal]
    extracted: MultichannelSignal
    auxive: core.AuxiveResult

    def summary_row(self) -> Dict:
        cfg = self.config
        return {
            "run_id": cfg.run_id,
            "mode": cfg.algo.mode,
            "pilot": cfg.pilot.mode,
            "is_position": cfg.scenario.is_position,
            "seed": cfg.seed,
            "input_snr_db": self.report.input_snr_db,
            "output_snr_db": self.report.output_snr_db,
            "isnr_db": self.report.isnr_db,
            "attenuation_var_db2": self.report.attenuation_variance,
            "fail": self.report.failed,
            "error": "",
        }

    def trace_rows(self) -> List[Dict]:
        active = self.pilot.active if self.pilot is not None else np.zeros(self.report.isnr_trace.size, bool)
        return [
            {"frame": i, "isnr_window_db": self.report.isnr_trace[i],
             "attenuation_db": self.report.attenuation_trace[i], "pilot_active": active[i]}
            for i in range(self.report.isnr_trace.size)
        ]


def compute(cfg: ExperimentConfig) -> RunResult:
    """Run the pipeline in memory without writing artifacts."""
    mixture, images = synthesize(cfg)
    an = analyze(cfg, mixture, images)
    pilot = build_pilot(cfg, an)
    try:
        result = core.run(an.mixture, auxive_params(cfg), cfg.algo.mode, pilot)
    except Exception as exc:
        raise HarnessError(f"ive-core: {exc}") from exc
    try:
        report = metrics.evaluate(result.history, an.mixture, an.images, an.soi_index, an.reference_channel,
                                  cfg.eval.fail_threshold_db, cfg.eval.window_frames)
        s_hat, _ = core.extract(an.mixture, result.history)
        out = istft(s_hat)
        extracted = MultichannelSignal(out.samples / cfg.stft.sample_scale, out.sample_rate)
    except Exception as exc:
        raise HarnessError(f"metrics: {exc}") from exc
    return RunResult(cfg, report, pilot, extracted, result)


def pilot_rows(pilot: Optional[core.PilotSignal], n_frames: int) -> List[Dict]:
    values = pilot.values if pilot is not None else np.zeros(n_frames)
    return [{"frame": i, "pilot": values[i], "active": values[i] > 0} for i in range(n_frames)]


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> RunResult:
    """Run one experiment and write its artifacts under ``<output_dir>/<run_id>/``.

    Files: ``extracted.wav``, ``summary.csv``, ``trace.csv``, ``pilot.csv`` and
    ``manifest.yaml`` (the resolved config, loadable with :func:`load_config`).
    """
    cfg = resolve(cfg)
    run_dir = resolve_output_dir(cfg, output_dir) / cfg.run_id
    res = compute(cfg)
    _atomic_write(run_dir / "manifest.yaml", cfg.to_yaml())
    _atomic_wav(res.extracted, run_dir / "extracted.wav")
    _atomic_write(run_dir / "summary.csv", _csv_text(SUMMARY_FIELDS, [res.summary_row()]))
    _atomic_write(run_dir / "trace.csv", _csv_text(TRACE_FIELDS, res.trace_rows()))
    _atomic_write(run_dir / "pilot.csv", _csv_text(["frame", "pilot", "active"],
                                                   pilot_rows(res.pilot, res.report.isnr_trace.size)))
    logger.info("%s: iSNR %.2f dB (input SNR %.2f dB)", cfg.run_id, res.report.isnr_db, res.report.input_snr_db)
    return res


def run_synth(cfg: ExperimentConfig, output_dir=None) -> Path:
    """Write the mixture and every source image as WAV files."""
    cfg = resolve(cfg)
    run_dir = resolve_output_dir(cfg, output_dir) / cfg.run_id
    mixture, images = synthesize(cfg)
    peak = max(np.max(np.abs(mixture.samples)), *(np.max(np.abs(i.samples)) for i in images))
    _atomic_write(run_dir / "manifest.yaml", cfg.to_yaml())
    _atomic_wav(mixture, run_dir / "mixture.wav")
    for src, img in zip(cfg.scenario.sources, images):
        _atomic_wav(img, run_dir / "images" / f"{src.name}.wav")
    if peak > 1.0:
        logger.warning("mixture peak %.3f exceeds full scale; WAV files were clipped", peak)
    return run_dir


def run_pilot(cfg: ExperimentConfig, output_dir=None) -> Path:
    cfg = resolve(cfg)
    run_dir = resolve_output_dir(cfg, output_dir) / cfg.run_id
    mixture, images = synthesize(cfg)
    an = analyze(cfg, mixture, images)
    pilot = build_pilot(cfg, an)
    _atomic_write(run_dir / "pilot.csv", _csv_text(["frame", "pilot", "active"], pilot_rows(pilot, an.mixture.n_frames)))
    return run_dir / "pilot.csv"


def aggregate(rows: Sequence[Dict]) -> List[Dict]:
    """One row per (mode, pilot, IS position) with mean/std iSNR and fail percentage."""
    groups: Dict[Tuple, List[Dict]] = {}
    for row in rows:
        groups.setdefault((row["mode"], row["pilot"], int(row["is_position"])), []).append(row)
    out = []
    def order(key):
        mode, pilot, pos = key
        return (MODE_ORDER.index(mode) if mode in MODE_ORDER else len(MODE_ORDER),
                list(PILOT_LABELS).index(pilot) if pilot in PILOT_LABELS else len(PILOT_LABELS), pos)

    for (mode, pilot, pos), members in sorted(groups.items(), key=lambda kv: order(kv[0])):
        ok = [r for r in members if not r.get("error")]
        values = np.array([float(r["isnr_db"]) for r in ok])
        fails = np.array([bool(int(r["fail"])) if isinstance(r["fail"], str) else bool(r["fail"]) for r in ok])
        out.append({
            "mode": mode,
            "pilot": pilot,
            "is_position": pos,
            "n_runs": len(members),
            "n_errors": len(members) - len(ok),
            "mean_isnr_db": float(values.mean()) if values.size else float("nan"),
            "std_isnr_db": float(values.std()) if values.size else float("nan"),
            "fail_pct": 100.0 * float(fails.mean()) if fails.size else float("nan"),
        })
    return out


def table_rows(agg: Sequence[Dict]) -> Tuple[List[str], List[Dict]]:
    """Pivot aggregates into a layout with one column per (mode, pilot) pair."""
    columns = []
    for r in agg:
        col = f"{r['mode']}/{PILOT_LABELS.get(r['pilot'], r['pilot'])}"
        if col not in columns:
            columns.append(col)
    rows = []
    for pos in sorted({r["is_position"] for r in agg}):
        isnr_row = {"row": f"IS position {pos} iSNR [dB]"}
        fail_row = {"row": f"IS position {pos} fail cases [%]"}
        for r in agg:
            if r["is_position"] != pos:
                continue
            col = f"{r['mode']}/{PILOT_LABELS.get(r['pilot'], r['pilot'])}"
            isnr_row[col] = f"{r['mean_isnr_db']:.1f} +- {r['std_isnr_db']:.1f}"
            fail_row[col] = f"{r['fail_pct']:.2f}"
        rows.extend([isnr_row, fail_row])
    return ["row", *columns], rows


@dataclass
class SweepResult:
    rows: List[Dict]
    aggregates: List[Dict]
    output_dir: Path


def run_sweep(configs: Sequence[ExperimentConfig], output_dir=None) -> SweepResult:
    """Run every config; failures are recorded in the summary instead of aborting."""
    if not configs:
        raise ValueError("run_sweep needs at least one config")
    configs = [resolve(c) for c in configs]
    out_dir = resolve_output_dir(configs[0], output_dir)
    ids = [c.run_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ValueError("run ids in a sweep must be unique; set distinct names or seeds")

    manifest = yaml.safe_dump({"runs": [c.to_dict() for c in configs]}, sort_keys=False, default_flow_style=None)
    _atomic_write(out_dir / "sweep_manifest.yaml", manifest)

    rows = []
    for cfg in configs:
        try:
            res = run_experiment(cfg, out_dir / "runs")
            rows.append(res.summary_row())
        except Exception as exc:
            logger.error("run %s failed: %s", cfg.run_id, exc)
            rows.append({"run_id": cfg.run_id, "mode": cfg.algo.mode, "pilot": cfg.pilot.mode,
                         "is_position": cfg.scenario.is_position, "seed": cfg.seed,
                         "error": str(exc).replace("\n", " ")})
    agg = aggregate(rows)
    fields, table = table_rows(agg)
    _atomic_write(out_dir / "summary.csv", _csv_text(SUMMARY_FIELDS, rows))
    _atomic_write(out_dir / "aggregate.csv", _csv_text(AGGREGATE_FIELDS, agg))
    _atomic_write(out_dir / "table.csv", _csv_text(fields, table))
    return SweepResult(rows, agg, out_dir)


def load_sweep_manifest(path) -> List[ExperimentConfig]:
    with open(path) as f:
        data = yaml.safe_load(f)
    return [from_dict(run) for run in data["runs"]]
