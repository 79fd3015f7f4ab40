"""Typed configuration objects and the flat INI format used by the CLI.

Every section of the INI file maps to one dataclass below and every key to a
field; values are parsed according to the field annotation. Unknown sections or
keys are rejected so that typos surface as configuration errors.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError

__all__ = [
    "DistrictConfig",
    "ScenarioConfig",
    "ThermalConfig",
    "SensingConfig",
    "FusionConfig",
    "TrainConfig",
    "GrlConfig",
    "EquityConfig",
    "InterventionConfig",
    "PipelineConfig",
    "load_config",
    "dump_config",
    "config_hash",
]


@dataclass(frozen=True)
class DistrictConfig:
    n: int = 120
    # MF, SF, COM, SCH, GRO, CLI
    fractions: tuple[float, ...] = (0.45, 0.33, 0.15, 0.02, 0.03, 0.02)
    sensor_fraction: float = 0.10
    income_noise_sd: float = 8.0
    vuln_noise_sd: float = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    duration_h: float = 72.0
    dt_min: int = 10
    t_mean: float = 32.0
    amplitude: float = 8.0
    phase: float = 0.15
    outage_period_h: float = 6.0
    outage_length_h: float = 4.0
    outage_phase_h: float = 0.0
    smoke: float = 0.15


@dataclass(frozen=True)
class ThermalConfig:
    truth_mode: str = "coupled"  # "coupled" | "rc2"
    jitter: float = 0.03
    drift: float = 1.2
    tau_min_h: float = 2.0
    tau_max_h: float = 8.0
    offset_max: float = 2.0
    substeps: int = 0  # 0 = derive from stiffness


@dataclass(frozen=True)
class SensingConfig:
    sigma_iot: float = 0.4
    sigma_uav: float = 0.8
    sigma_sat: float = 1.2
    uav_every_min: int = 60
    sat_every_min: int = 360
    sat_smooth_k: int = 5  # <= 1 disables the regional average


@dataclass(frozen=True)
class FusionConfig:
    window: int = 6
    beta: float = 0.9
    tau: float = 0.25
    tau_uav: float = 12.0
    tau_sat: float = 48.0
    delta_ref: float = 1.0
    kalman_q_wall: float = 0.01
    kalman_q_zone: float = 0.05

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("fusion.window must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("fusion.beta must lie in (0, 1)")
        if self.tau <= 0 or self.tau_uav <= 0 or self.tau_sat <= 0:
            raise ConfigError("fusion temperatures/half-lives must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    windows: int = 32
    window_len: int = 36
    lr: float = 0.03
    clip_norm: float = 5.0
    decay_every: int = 100
    decay: float = 0.5
    huber_delta: float = 1.0
    lambda_phys: float = 12.0
    phys_scale: float = 1.0
    phys_points: int = 8
    soft_lo: float = 31.5
    soft_hi: float = 35.5
    soft_bounds: bool = False
    well_observed: float = 0.3
    val_fraction: float = 0.2
    hidden: int = 16
    embed: int = 4
    min_sat_points: int = 50
    full_batch: bool = False
    start_stride: int = 36  # window starts lie on multiples of this many steps
    courant: float = 0.25  # substep bound dt_sub * rho for calibration rollouts


@dataclass(frozen=True)
class GrlConfig:
    k: int = 8
    eta: float = 0.01
    gamma: float = 0.995
    sigma: float = 0.0  # 0 = mean nearest-neighbour distance
    M: int = 1
    top_k: int = 10
    # MF, SF, COM, SCH, GRO, CLI
    priors: tuple[float, ...] = (0.5, 0.3, 0.4, 0.8, 0.6, 1.0)
    eps: float = 1e-6
    snapshot_every: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("graph.k must be >= 1")
        if self.eta < 0 or self.gamma <= 0:
            raise ConfigError("graph.eta must be >= 0 and graph.gamma > 0")
        if len(self.priors) != 6:
            raise ConfigError("graph.priors needs one value per building type")


@dataclass(frozen=True)
class EquityConfig:
    beta_phys: float = 0.6
    beta_sens: float = 0.4
    gamma: float = 0.5
    eps_exp: float = 0.05
    heat_threshold: float = 30.0
    smooth_k: int = 5


@dataclass(frozen=True)
class InterventionConfig:
    oh_threshold: float = 30.0
    resimulate_oh: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    district: DistrictConfig = field(default_factory=DistrictConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    thermal: ThermalConfig = field(default_factory=ThermalConfig)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    calibration: TrainConfig = field(default_factory=TrainConfig)
    graph: GrlConfig = field(default_factory=GrlConfig)
    equity: EquityConfig = field(default_factory=EquityConfig)
    intervention: InterventionConfig = field(default_factory=InterventionConfig)


_SECTIONS = {f.name: f for f in dataclasses.fields(PipelineConfig) if dataclasses.is_dataclass(f.default_factory)}


def _parse_value(raw: str, annotation, where: str):
    raw = raw.strip()
    try:
        if annotation is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        if annotation is str:
            return raw
        if typing.get_origin(annotation) is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {annotation}") from None
    raise ConfigError(f"{where}: unsupported field type {annotation}")


def _build(cls, items: dict[str, str], section: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        kwargs[key] = _parse_value(raw, hints[key], f"[{section}] {key}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, *, text: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Read an INI config (or ``text``); missing keys fall back to defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    run_items = {}
    sub = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "run":
            run_items = items
        elif section in _SECTIONS:
            sub[section] = _build(_SECTIONS[section].default_factory, items, section)
        else:
            raise ConfigError(f"unknown section [{section}]")
    for key in run_items:
        if key not in ("seed", "out_dir"):
            raise ConfigError(f"unknown key [run] {key}")
    kwargs = dict(sub)
    if "seed" in run_items:
        kwargs["seed"] = _parse_value(run_items["seed"], int, "[run] seed")
    if "out_dir" in run_items:
        kwargs["out_dir"] = run_items["out_dir"]
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**kwargs)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def dump_config(cfg: PipelineConfig) -> str:
    lines = ["[run]", f"seed = {cfg.seed}", f"out_dir = {cfg.out_dir}", ""]
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        sub = getattr(cfg, name)
        for f in dataclasses.fields(sub):
            lines.append(f"{f.name} = {_fmt(getattr(sub, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: PipelineConfig) -> str:
    """Hash of everything except the output directory."""
    payload = dataclasses.asdict(cfg)
    payload.pop("out_dir")
    blob = json.dumps(payload, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()
