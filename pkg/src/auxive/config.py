"""Experiment configuration: YAML in, fully resolved manifest out.

Every key has a visible default in the dataclasses below, and the manifest
written next to each run lists every resolved value, so a run can be
reproduced from its manifest alone.
"""
import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

HARNESS_SAMPLE_RATE = 16000
PILOT_MODES = ("none", "oracle", "score_file", "corrupted_oracle")
STEM_KINDS = ("speech", "laplacian", "noise", "wav")


class ConfigError(ValueError):
    pass


@dataclass
class RoomConfig:
    dimensions: List[float] = field(default_factory=lambda: [6.0, 6.0, 3.0])
    t60: float = 0.1
    speed_of_sound: float = 343.0
    absorption_model: str = "calibrated"


@dataclass
class MicConfig:
    center: List[float] = field(default_factory=lambda: [3.0, 2.74])
    n_mics: int = 5
    spacing: float = 0.05
    rotation_deg: float = 45.0
    height: float = 1.5


@dataclass
class TrajectoryConfig:
    kind: str = "static"
    anchor: List[float] = field(default_factory=lambda: [3.0, 3.0])
    radius: float = 0.0
    speed: float = 0.0
    start_angle: float = 0.0
    end_angle: float = float(np.pi)
    height: float = 1.5


@dataclass
class StemConfig:
    kind: str = "speech"
    seed: Optional[int] = None
    path: Optional[str] = None
    rms: float = 0.05


@dataclass
class SourceConfig:
    name: str = "source"
    role: str = "interferer"
    gain_db: float = 0.0
    stem: StemConfig = field(default_factory=StemConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)


@dataclass
class ScenarioConfig:
    sample_rate: int = HARNESS_SAMPLE_RATE
    duration: Optional[float] = 20.0
    is_position: int = 1
    segment_len: float = 0.128
    crossfade: float = 0.032
    noise_level_db: Optional[float] = -10.0
    room: RoomConfig = field(default_factory=RoomConfig)
    mics: MicConfig = field(default_factory=MicConfig)
    sources: List[SourceConfig] = field(default_factory=list)


@dataclass
class StftSection:
    fft_size: int = 512
    hop: int = 160
    window: str = "hann"
    # amplitude of full scale when samples enter the STFT; 32768 = 16-bit integer units
    sample_scale: float = 32768.0


@dataclass
class AlgoConfig:
    mode: str = "block_online"
    block_len: int = 100
    block_shift: int = 75
    alpha: float = 0.0
    iterations_per_block: int = 1
    delta: float = 1e-6
    eps: float = 1e-6
    reference_channel: int = 0


@dataclass
class PilotConfig:
    mode: str = "none"
    nu: float = 0.5
    eta: float = float(np.exp(-5.0))
    score_file: Optional[str] = None
    soi_speaker: Optional[str] = None
    dominant_accuracy: float = 0.624
    nonactive_dominant_rate: float = 0.217
    seed: Optional[int] = None


@dataclass
class EvalConfig:
    fail_threshold_db: float = 1.0
    window_frames: int = 100


@dataclass
class ExperimentConfig:
    name: Optional[str] = None
    seed: int = 0
    output_dir: str = "runs"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    stft: StftSection = field(default_factory=StftSection)
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    pilot: PilotConfig = field(default_factory=PilotConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def run_id(self) -> str:
        return self.name or f"{self.algo.mode}-{self.pilot.mode}-pos{self.scenario.is_position}-seed{self.seed}"

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)


def _coerce(value: Any, annotation: Any, where: str) -> Any:
    """Convert YAML scalars to the declared numeric type (YAML reads ``1e-5`` as a string)."""
    args = getattr(annotation, "__args__", ())
    if type(None) in args:
        if value is None:
            return None
        annotation = next(a for a in args if a is not type(None))
    try:
        if annotation is float and not isinstance(value, bool):
            return float(value)
        if annotation is int and not isinstance(value, bool):
            as_float = float(value)
            if as_float != int(as_float):
                raise ValueError
            return int(as_float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a {annotation.__name__}, got {value!r}") from None
    return value


def _build(cls, data: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where or 'config'}")
    kwargs = {}
    hints = {
        ScenarioConfig: {"room": RoomConfig, "mics": MicConfig},
        SourceConfig: {"stem": StemConfig, "trajectory": TrajectoryConfig},
        ExperimentConfig: {"scenario": ScenarioConfig, "stft": StftSection, "algo": AlgoConfig,
                           "pilot": PilotConfig, "eval": EvalConfig},
    }.get(cls, {})
    for name, value in data.items():
        sub = f"{where}.{name}" if where else name
        if name in hints:
            kwargs[name] = _build(hints[name], value, sub)
        elif cls is ScenarioConfig and name == "sources":
            if not isinstance(value, list):
                raise ConfigError(f"{sub} must be a list")
            kwargs[name] = [_build(SourceConfig, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[name] = _coerce(value, fields[name].type, sub)
    return cls(**kwargs)


def from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Build a config from nested dicts and resolve every derived value."""
    return resolve(_build(ExperimentConfig, copy.deepcopy(data), ""))


def load_config(path, overrides: Optional[List[str]] = None) -> ExperimentConfig:
    """Read a YAML config, apply ``key=value`` overrides, then resolve."""
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    cfg = from_dict(apply_overrides(data, overrides or []))
    # stem paths are relative to the config file
    base = Path(path).resolve().parent
    for src in cfg.scenario.sources:
        if src.stem.path and not Path(src.stem.path).is_absolute():
            src.stem.path = str(base / src.stem.path)
    if cfg.pilot.score_file and not Path(cfg.pilot.score_file).is_absolute():
        cfg.pilot.score_file = str(base / cfg.pilot.score_file)
    return cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.to_yaml())


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """Apply ``dotted.key=value`` overrides (values parsed as YAML scalars)."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                node = node.setdefault(part, {})
        if isinstance(node, list):
            node[int(parts[-1])] = value
        else:
            node[parts[-1]] = value
    return data


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill seeds derived from the run seed and check cross-field consistency."""
    sc = cfg.scenario
    if sc.sample_rate != HARNESS_SAMPLE_RATE:
        raise ConfigError(f"the harness only accepts {HARNESS_SAMPLE_RATE} Hz input, got {sc.sample_rate}")
    if not sc.sources:
        raise ConfigError("scenario.sources is empty")
    roles = [s.role for s in sc.sources]
    if roles.count("SOI") != 1:
        raise ConfigError(f"exactly one source must have role SOI, got roles {roles}")
    for i, src in enumerate(sc.sources):
        if src.stem.kind not in STEM_KINDS:
            raise ConfigError(f"scenario.sources[{i}].stem.kind must be one of {STEM_KINDS}")
        if src.stem.kind == "wav":
            if not src.stem.path:
                raise ConfigError(f"scenario.sources[{i}].stem.path is required for wav stems")
        elif src.stem.seed is None:
            src.stem.seed = int(cfg.seed) * 100 + i
    if sc.duration is None and not any(s.stem.kind == "wav" for s in sc.sources):
        raise ConfigError("scenario.duration is required when no wav stems are given")

    algo = cfg.algo
    if algo.mode not in ("batch", "block_online", "online"):
        raise ConfigError(f"algo.mode must be batch, block_online or online, got {algo.mode!r}")
    if not 1 <= algo.block_shift <= algo.block_len:
        raise ConfigError("algo.block_shift must lie in [1, algo.block_len]")
    if algo.mode == "online" and (algo.block_len != 1 or algo.block_shift != 1):
        raise ConfigError("online mode requires algo.block_len = algo.block_shift = 1")
    if algo.mode == "online" and not 0.0 < algo.alpha < 1.0:
        raise ConfigError("online mode requires 0 < algo.alpha < 1")

    pilot = cfg.pilot
    if pilot.mode not in PILOT_MODES:
        raise ConfigError(f"pilot.mode must be one of {PILOT_MODES}, got {pilot.mode!r}")
    if pilot.mode == "score_file":
        if not pilot.score_file or not pilot.soi_speaker:
            raise ConfigError("score_file pilot needs pilot.score_file and pilot.soi_speaker")
    if pilot.seed is None:
        pilot.seed = int(cfg.seed)
    return cfg


def reference_scenario(is_position: int = 1, duration: float = 20.0, seed: int = 0) -> Dict[str, Any]:
    """Moving SOI on a semicircle, static interferer at one of two positions, point noise source."""
    is_xy = {1: [3.0, 4.74], 2: [3.0, 0.74]}[is_position]
    return {
        "duration": duration,
        "is_position": is_position,
        "sources": [
            {"name": "soi", "role": "SOI", "stem": {"kind": "speech", "seed": 1000 + seed},
             "trajectory": {"kind": "semicircle", "anchor": [3.0, 2.74], "radius": 1.5, "speed": 0.4,
                            "start_angle": 0.0, "end_angle": float(np.pi), "height": 1.5}},
            {"name": "interferer", "role": "interferer", "stem": {"kind": "speech", "seed": 2000 + seed},
             "trajectory": {"kind": "static", "anchor": is_xy, "height": 1.5}},
            {"name": "noise", "role": "noise", "stem": {"kind": "noise", "seed": 3000 + seed},
             "trajectory": {"kind": "static", "anchor": [1.0, 2.74], "height": 1.5}},
        ],
    }


def reference_config(
    mode: str = "block_online",
    pilot_mode: str = "none",
    is_position: int = 1,
    duration: float = 20.0,
    seed: int = 0,
    output_dir: str = "runs",
) -> ExperimentConfig:
    algo = {"mode": mode}
    if mode == "online":
        algo.update(block_len=1, block_shift=1, alpha=0.97)
    return from_dict({
        "seed": seed,
        "output_dir": output_dir,
        "scenario": reference_scenario(is_position, duration, seed),
        "algo": algo,
        "pilot": {"mode": pilot_mode},
    })
