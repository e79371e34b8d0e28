"""Run configuration: a strict JSON document mapped onto dataclasses.

Layout (every key optional unless noted)::

    {
      "vehicle": "model3lr" | {"base": ..., "name": ..., "fixed": {...}, "initial": {...}},
      "data": {
        "path": "log.csv",               # a recorded log, or
        "cycle": {"duration": 900, "noise_sigma": 0.01, "seed": 0,
                  "sample_rate": 1.0, "phases": [{"kind": "idle", "duration": 20}, ...]},
        "truth": {"eta": ..., "mu": ..., "m": ..., "C_rr": ..., "C_d": ...},
        "accel_window": 5
      },
      "pinn": {PinnConfig fields},
      "rknn": {RknnConfig fields},
      "output_dir": "runs/default"
    }

A synthetic cycle without ``phases`` uses the built-in mixed cycle.  A
missing ``truth`` generates the synthetic log at the vehicle's initial
parameters.  Unknown keys anywhere raise :class:`ConfigError`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .data import CycleSpec, Phase, default_cycle
from .dynamics import PhysParams, VehiclePreset, get_preset, preset_from_dict
from .pinn import PinnConfig
from .rknn import RknnConfig


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _strict(cls, raw: Any, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class CycleConfig:
    duration: float = 900.0
    noise_sigma: float = 0.0
    seed: int = 0
    sample_rate: float = 1.0
    phases: list[dict] | None = None

    def spec(self) -> CycleSpec:
        try:
            if self.phases is None:
                return default_cycle(self.duration, self.noise_sigma, self.seed, self.sample_rate)
            phases = tuple(_strict(Phase, p, "data.cycle.phases[]") for p in self.phases)
            return CycleSpec(self.duration, phases, self.sample_rate, self.noise_sigma, self.seed)
        except ValueError as exc:
            raise ConfigError(f"data.cycle: {exc}") from exc


@dataclass
class DataConfig:
    path: str | None = None
    cycle: CycleConfig | None = None
    truth: dict | None = None
    accel_window: int = 5

    def __post_init__(self) -> None:
        if isinstance(self.cycle, dict):
            self.cycle = _strict(CycleConfig, self.cycle, "data.cycle")
        if self.path is not None and self.cycle is not None:
            raise ConfigError("data needs either 'path' or 'cycle', not both")
        if self.accel_window < 1 or self.accel_window % 2 == 0:
            raise ConfigError("data.accel_window must be a positive odd integer")

    def truth_params(self, preset: VehiclePreset) -> PhysParams:
        if self.truth is None:
            return preset.initial
        return _strict(PhysParams, self.truth, "data.truth")


@dataclass
class RunConfig:
    vehicle: str | dict = "model3lr"
    data: DataConfig = field(default_factory=DataConfig)
    pinn: PinnConfig = field(default_factory=PinnConfig)
    rknn: RknnConfig = field(default_factory=RknnConfig)
    output_dir: str = "runs/default"

    def preset(self) -> VehiclePreset:
        try:
            if isinstance(self.vehicle, str):
                return get_preset(self.vehicle)
            return preset_from_dict(self.vehicle)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"vehicle: {exc}") from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pinn"]["layer_sizes"] = list(self.pinn.layer_sizes)
        out["rknn"]["hidden"] = list(self.rknn.hidden)
        return out


def parse_config(raw: Any) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(raw) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    cfg = RunConfig(
        vehicle=raw.get("vehicle", "model3lr"),
        data=_strict(DataConfig, raw.get("data"), "data"),
        pinn=_strict(PinnConfig, raw.get("pinn"), "pinn"),
        rknn=_strict(RknnConfig, raw.get("rknn"), "rknn"),
        output_dir=str(raw.get("output_dir", "runs/default")),
    )
    cfg.preset()  # validate early
    return cfg


def load_config(path: str | Path) -> tuple[RunConfig, str]:
    """Parsed config plus the original text (echoed verbatim into run outputs)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw), text
