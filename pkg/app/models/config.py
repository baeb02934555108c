"""Experiment configuration schema, loaded from TOML or JSON."""

from __future__ import annotations

import json
import tomllib
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.services.authenticator import LegitimateProfile
from app.services.channel import ChannelParams, probe_processing_gain
from app.services.errors import ConfigError
from app.services.localization import LocalizationSystem
from app.services.simulator import AttackerModel, Scenario
from app.settings import settings

DEFAULT_ANCHORS: list[tuple[float, float]] = [
    (0.0, 500.0),
    (-500.0, -500.0),
    (500.0, -500.0),
    (-500.0, 500.0),
    (0.0, -500.0),
]
DEFAULT_SEED = 20240601


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProbeConfig(_Strict):
    bandwidth_hz: float = Field(gt=0)
    symbols: float = Field(gt=0)


class ChannelConfig(_Strict):
    freq_khz: float = Field(22.0, gt=0)
    spreading: float = 1.5
    sound_speed: float = Field(1500.0, gt=0)
    tx_power: float = Field(100.0, gt=0)
    link_quality_db: float = 10.0
    processing_gain: float | None = Field(None, gt=0)
    probe: ProbeConfig | None = None

    @model_validator(mode="after")
    def _one_gain_source(self) -> ChannelConfig:
        if self.processing_gain is not None and self.probe is not None:
            raise ValueError("set either processing_gain or probe, not both")
        return self

    def to_params(self) -> ChannelParams:
        if self.probe is not None:
            gain = probe_processing_gain(self.probe.bandwidth_hz, self.probe.symbols)
        else:
            gain = 1.0 if self.processing_gain is None else self.processing_gain
        return ChannelParams(
            freq_khz=self.freq_khz,
            spreading=self.spreading,
            sound_speed=self.sound_speed,
            tx_power=self.tx_power,
            link_quality_db=self.link_quality_db,
            processing_gain=gain,
        )


class AttackerConfig(_Strict):
    kind: Literal["fixed", "box", "circle"] = "box"
    position: tuple[float, float] | None = None
    extent: float = Field(500.0, gt=0)
    radius: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _position_for_fixed(self) -> AttackerConfig:
        if self.kind == "fixed" and self.position is None:
            raise ValueError("a fixed attacker needs a position")
        return self

    def to_model(self) -> AttackerModel:
        return AttackerModel(
            kind=self.kind, position=self.position, extent=self.extent, radius=self.radius
        )


class SweepConfig(_Strict):
    axis: Literal["link_quality_db", "radius_R", "threshold"]
    values: list[float] = Field(min_length=1)


class RocGridConfig(_Strict):
    thresholds: list[float] | None = None
    start: float | None = Field(None, gt=0)
    stop: float | None = Field(None, gt=0)
    num: int = Field(60, ge=2)
    include_zero: bool = False

    @model_validator(mode="after")
    def _grid_source(self) -> RocGridConfig:
        if self.thresholds is None and (self.start is None or self.stop is None):
            raise ValueError("give thresholds or both start and stop")
        if self.thresholds is not None and (self.start is not None or self.stop is not None):
            raise ValueError("thresholds and start/stop are mutually exclusive")
        if self.start is not None and self.stop is not None and self.stop <= self.start:
            raise ValueError("stop must exceed start")
        return self

    def grid(self) -> list[float]:
        if self.thresholds is not None:
            values = sorted(set(float(v) for v in self.thresholds))
        else:
            values = [float(v) for v in np.geomspace(self.start, self.stop, self.num)]
        if self.include_zero and (not values or values[0] > 0):
            values = [0.0, *values]
        return values


class ExperimentConfig(_Strict):
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    anchors: list[tuple[float, float]] = Field(default_factory=lambda: list(DEFAULT_ANCHORS[:3]))
    num_anchors: int | None = Field(None, ge=3)
    legitimate: tuple[float, float] = (0.0, 0.0)
    attacker: AttackerConfig = Field(default_factory=AttackerConfig)
    threshold: float = Field(1e6, ge=0)
    baseline_threshold: float = Field(1.0, ge=0)
    trials: int = Field(default_factory=lambda: settings.default_trials, gt=0)
    seed: int = Field(DEFAULT_SEED, ge=0, lt=2**64)
    sigma_override: float | None = Field(None, ge=0)
    mode: Literal["analytic", "montecarlo", "both"] = "both"
    analytic_model: Literal["unprojected", "projected"] = "projected"
    evaluator: Literal["imhof", "laguerre"] = "imhof"
    output: str | None = None
    figure: Literal["fig2", "fig3", "fig4", "fig5"] | None = None
    sweep: SweepConfig | None = None
    roc: RocGridConfig | None = None

    @model_validator(mode="after")
    def _enough_anchors(self) -> ExperimentConfig:
        if len(self.anchors) < 3:
            raise ValueError("at least 3 anchors are required")
        if self.num_anchors is not None and self.num_anchors > len(self.anchors):
            raise ValueError(f"num_anchors={self.num_anchors} exceeds the {len(self.anchors)} anchors")
        return self

    def active_anchors(self) -> list[tuple[float, float]]:
        n = self.num_anchors or len(self.anchors)
        return list(self.anchors[:n])

    def build_scenario(self) -> Scenario:
        system = LocalizationSystem.from_anchors(self.active_anchors())
        return Scenario(
            channel=self.channel.to_params(),
            system=system,
            legitimate=LegitimateProfile.enroll(system, self.legitimate),
            attacker=self.attacker.to_model(),
            threshold=self.threshold,
            trials=self.trials,
            seed=self.seed,
            baseline_threshold=self.baseline_threshold,
            sigma_override=self.sigma_override,
        )


def _problems(exc: ValidationError) -> list[tuple[str, str]]:
    return [(".".join(str(p) for p in err["loc"]) or "<root>", err["msg"]) for err in exc.errors()]


def validate_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_problems(e)) from e


def parse_config_text(text: str, fmt: str = "toml") -> ExperimentConfig:
    try:
        if fmt == "toml":
            data = tomllib.loads(text)
        elif fmt == "json":
            data = json.loads(text)
        else:
            raise ConfigError([("<format>", f"unsupported config format {fmt!r}")])
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError([("<document>", str(e))]) from e
    if not isinstance(data, dict):
        raise ConfigError([("<document>", "top level must be a table")])
    return validate_config(data)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    fmt = "json" if p.suffix.lower() == ".json" else "toml"
    return parse_config_text(p.read_text(encoding="utf-8"), fmt)


def dump_config(config: ExperimentConfig) -> str:
    return config.model_dump_json(indent=2)


def default_config(num_anchors: int = 3) -> ExperimentConfig:
    if num_anchors not in (3, 4, 5):
        raise ConfigError([("num_anchors", f"the default layout has 3 to 5 anchors, got {num_anchors}")])
    return ExperimentConfig(
        channel=ChannelConfig(probe=ProbeConfig(bandwidth_hz=10_000.0, symbols=8)),
        anchors=list(DEFAULT_ANCHORS),
        num_anchors=num_anchors,
        legitimate=(0.0, 0.0),
        attacker=AttackerConfig(kind="box", extent=500.0),
        threshold=1e6,
        baseline_threshold=1.0,
        trials=1_000_000,
        seed=DEFAULT_SEED,
    )
