"""EV longitudinal force model and battery-power ODE.

Everything here is written against the arithmetic operators only, so the
same functions evaluate on floats, numpy arrays, or autodiff ``Var``s
(the physics loss differentiates through :func:`battery_power`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

GRAVITY = 9.81
AIR_DENSITY = 1.17
REGEN_THRESHOLD = -0.045  # m/s^2

PARAM_NAMES = ("eta", "mu", "m", "C_rr", "C_d")
# (lower, upper, lower-inclusive)
PARAM_BOUNDS = {
    "eta": (0.0, 1.0, False),
    "mu": (0.0, 1.0, True),
    "m": (500.0, 5000.0, True),
    "C_rr": (0.0, 0.1, False),
    "C_d": (0.0, 1.0, False),
}
_OPEN_FLOOR = 1e-9


@dataclass(frozen=True)
class FixedParams:
    A: float
    P_aux: float
    rho: float = AIR_DENSITY
    g: float = GRAVITY
    theta: float = 0.0
    beta: float = REGEN_THRESHOLD

    def __post_init__(self) -> None:
        if self.rho <= 0 or self.A <= 0 or self.g <= 0:
            raise ValueError("rho, A and g must be positive")
        if self.beta >= 0:
            raise ValueError("regen threshold beta must be negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PhysParams:
    eta: float
    mu: float
    m: float
    C_rr: float
    C_d: float

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not _in_bounds(name, value):
                raise ValueError(f"{name}={value} outside its bounds {PARAM_BOUNDS[name][:2]}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> PhysParams:
        return cls(*(float(v) for v in values))

    def to_dict(self) -> dict:
        return asdict(self)


def _in_bounds(name: str, value: float) -> bool:
    lo, hi, closed = PARAM_BOUNDS[name]
    return (value >= lo if closed else value > lo) and value <= hi


def clamp_params(values: np.ndarray) -> np.ndarray:
    """Project a raw (eta, mu, m, C_rr, C_d) vector onto the feasible box."""
    out = np.array(values, dtype=float)
    for i, name in enumerate(PARAM_NAMES):
        lo, hi, closed = PARAM_BOUNDS[name]
        out[i] = min(max(out[i], lo if closed else lo + _OPEN_FLOOR), hi)
    return out


@dataclass(frozen=True)
class VehiclePreset:
    name: str
    fixed: FixedParams
    initial: PhysParams


PRESETS = {
    "model3lr": VehiclePreset(
        "model3lr",
        FixedParams(A=2.22, P_aux=1100.0),
        PhysParams(eta=0.7, mu=0.5, m=1823.0, C_rr=0.0096, C_d=0.23),
    ),
    "modelS": VehiclePreset(
        "modelS",
        FixedParams(A=2.40, P_aux=390.0),
        PhysParams(eta=0.7, mu=0.5, m=2250.0, C_rr=0.0096, C_d=0.23),
    ),
}


def get_preset(name: str) -> VehiclePreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown vehicle preset {name!r}; known: {sorted(PRESETS)}") from None


def preset_from_dict(data: dict) -> VehiclePreset:
    """Inline preset: ``{"name", "fixed": {...}, "initial": {...}}``."""
    allowed = {"name", "fixed", "initial", "base"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown vehicle keys: {sorted(unknown)}")
    base = get_preset(data["base"]) if "base" in data else None
    fixed_kw = data.get("fixed", {})
    init_kw = data.get("initial", {})
    _reject_unknown(FixedParams, fixed_kw, "vehicle.fixed")
    _reject_unknown(PhysParams, init_kw, "vehicle.initial")
    if base is not None:
        fixed = replace(base.fixed, **fixed_kw)
        initial = replace(base.initial, **init_kw)
    else:
        fixed = FixedParams(**fixed_kw)
        initial = PhysParams(**init_kw)
    return VehiclePreset(data.get("name", base.name if base else "custom"), fixed, initial)


def _reject_unknown(cls, kw: dict, where: str) -> None:
    names = {f.name for f in fields(cls)}
    unknown = set(kw) - names
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")


def regen_indicator(dvdt, beta: float = REGEN_THRESHOLD):
    """1 where deceleration is past the regen threshold, else 0.

    Always evaluated on numbers, never on the tape.
    """
    return np.where(np.asarray(dvdt) < beta, 1.0, 0.0) if np.ndim(dvdt) else float(dvdt < beta)


def force_components(v, dvdt, fixed: FixedParams, phys) -> dict:
    """Drag, rolling, gravity and inertia forces in newtons."""
    return {
        "F_drag": 0.5 * fixed.rho * fixed.A * phys.C_d * v**2,
        "F_rolling": phys.C_rr * phys.m * fixed.g * math.cos(fixed.theta),
        "F_gravity": phys.m * fixed.g * math.sin(fixed.theta),
        "F_inertia": phys.m * dvdt,
    }


def battery_power(v, dvdt, fixed: FixedParams, phys):
    """Battery power (W) needed to follow ``v(t)``, with regenerative braking.

    ``phys`` may hold floats or autodiff Vars; ``v`` and ``dvdt`` are data.
    """
    regen = regen_indicator(dvdt, fixed.beta)
    traction = (
        0.5 * fixed.rho * fixed.A * phys.C_d * v**3
        + phys.C_rr * phys.m * (fixed.g * math.cos(fixed.theta)) * v
        + phys.m * (fixed.g * math.sin(fixed.theta)) * v
        + phys.m * (v * dvdt) * (1.0 - phys.mu * regen)
    )
    return traction / phys.eta + fixed.P_aux


def regen_power(v, dvdt, phys, beta: float = REGEN_THRESHOLD):
    """Power recovered by regenerative braking (positive while braking)."""
    return -phys.mu * phys.m * v * dvdt * regen_indicator(dvdt, beta)


def ground_truth_power(current, voltage):
    """Battery power from measured current and voltage, signed."""
    return np.asarray(current, dtype=float) * np.asarray(voltage, dtype=float) \
        if np.ndim(current) or np.ndim(voltage) else float(current) * float(voltage)


class NoIdleSegmentError(ValueError):
    pass


def estimate_aux_power(log, v_eps: float = 0.1, a_eps: float = 0.01) -> float:
    """Mean measured power over samples where the car stands still."""
    if log.P is None:
        raise ValueError("no ground-truth power in log")
    if log.dvdt is not None:
        dvdt = log.dvdt
    else:
        from .data import estimate_accel

        dvdt = estimate_accel(log, 1)
    idle = (np.abs(log.v) < v_eps) & (np.abs(dvdt) < a_eps)
    if not np.any(idle):
        raise NoIdleSegmentError("no idle segment in log")
    return float(np.mean(log.P[idle]))
