"""Drive logs: CSV ingestion, acceleration estimates, synthetic cycles,
normalization and time-window train/validation splits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TextIO

import numpy as np

from .dynamics import FixedParams, PhysParams, battery_power, ground_truth_power

REQUIRED_COLUMNS = ("t_s", "v_mps")
OPTIONAL_PAIR = ("voltage_v", "current_a")
SYNTHETIC_POWER = "p_w"


class LogFormatError(ValueError):
    pass


@dataclass
class DriveLog:
    t: np.ndarray
    v: np.ndarray
    voltage: np.ndarray | None = None
    current: np.ndarray | None = None
    P: np.ndarray | None = None
    dvdt: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        n = len(self.t)
        for name in ("v", "voltage", "current", "P", "dvdt"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            setattr(self, name, arr)
            if arr.shape != (n,):
                raise ValueError(f"{name} has length {len(arr)}, expected {n}")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time must be strictly increasing")
        if np.any(self.v < 0):
            raise ValueError("speed must be non-negative")
        if self.P is None and self.voltage is not None and self.current is not None:
            self.P = ground_truth_power(self.current, self.voltage)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    def slice(self, idx) -> DriveLog:
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return DriveLog(self.t[idx], self.v[idx], pick(self.voltage), pick(self.current),
                        pick(self.P), pick(self.dvdt))


# -- CSV ---------------------------------------------------------------------

def load_log(stream: TextIO | str | Path) -> DriveLog:
    """Parse ``t_s,v_mps[,voltage_v,current_a][,p_w]`` CSV.

    ``stream`` is an open text stream or a path.
    """
    if isinstance(stream, (str, Path)):
        with open(stream, newline="") as fh:
            return load_log(fh)
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise LogFormatError("empty log") from None
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise LogFormatError(f"missing required columns: {missing}")
    has_vi = [c in header for c in OPTIONAL_PAIR]
    if any(has_vi) and not all(has_vi):
        raise LogFormatError("voltage_v and current_a must appear together")
    known = set(REQUIRED_COLUMNS) | set(OPTIONAL_PAIR) | {SYNTHETIC_POWER}
    unknown = [c for c in header if c not in known]
    if unknown:
        raise LogFormatError(f"unknown columns: {unknown}")
    col = {name: i for i, name in enumerate(header)}

    rows: dict[str, list[float]] = {name: [] for name in header}
    last_t = -math.inf
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise LogFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(cell) for cell in row]
        except ValueError:
            raise LogFormatError(f"line {lineno}: non-numeric field in {row!r}") from None
        t = values[col["t_s"]]
        if not t > last_t:
            raise LogFormatError(f"line {lineno}: non-increasing time {t} (row {lineno - 1})")
        if values[col["v_mps"]] < 0:
            raise LogFormatError(f"line {lineno}: negative speed")
        last_t = t
        for name, value in zip(header, values):
            rows[name].append(value)

    get = lambda name: np.array(rows[name]) if name in rows else None  # noqa: E731
    log = DriveLog(get("t_s"), get("v_mps"), get("voltage_v"), get("current_a"))
    if SYNTHETIC_POWER in rows and log.P is None:
        log.P = get(SYNTHETIC_POWER)
    return log


def save_log(log: DriveLog, stream: TextIO | str | Path) -> None:
    """Write a log in the same CSV schema; values use ``repr`` so they round-trip."""
    if isinstance(stream, (str, Path)):
        with open(stream, "w", newline="") as fh:
            return save_log(log, fh)
    columns = [("t_s", log.t), ("v_mps", log.v)]
    if log.voltage is not None and log.current is not None:
        columns += [("voltage_v", log.voltage), ("current_a", log.current)]
    elif log.P is not None:
        columns.append((SYNTHETIC_POWER, log.P))
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow([name for name, _ in columns])
    for i in range(len(log)):
        writer.writerow([repr(float(arr[i])) for _, arr in columns])


def log_to_string(log: DriveLog) -> str:
    buf = io.StringIO()
    save_log(log, buf)
    return buf.getvalue()


# -- acceleration ------------------------------------------------------------

def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically at the ends."""
    if window < 1 or window % 2 == 0:
        raise ValueError("smoothing window must be a positive odd integer")
    x = np.asarray(x, dtype=float)
    if window == 1:
        return x.copy()
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    n = len(x)
    idx = np.arange(n)
    k = np.minimum(half, np.minimum(idx, n - 1 - idx))
    return (csum[idx + k + 1] - csum[idx - k]) / (2 * k + 1)


def estimate_accel(log: DriveLog, window: int = 5) -> np.ndarray:
    """Smooth speed, then take central differences (one-sided at the ends)."""
    if len(log) < 3:
        raise ValueError("need at least 3 samples to estimate acceleration")
    v = moving_average(log.v, window)
    t = log.t
    a = np.empty_like(v)
    a[1:-1] = (v[2:] - v[:-2]) / (t[2:] - t[:-2])
    a[0] = (v[1] - v[0]) / (t[1] - t[0])
    a[-1] = (v[-1] - v[-2]) / (t[-1] - t[-2])
    return a


# -- synthetic cycles --------------------------------------------------------

PHASE_KINDS = ("accelerate", "cruise", "brake", "idle")


@dataclass(frozen=True)
class Phase:
    kind: str
    target: float = 0.0  # m/s, accelerate/brake
    rate: float = 1.0  # peak |dv/dt| in m/s^2, accelerate/brake
    duration: float = 0.0  # s, cruise/idle

    def __post_init__(self) -> None:
        if self.kind not in PHASE_KINDS:
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if self.kind in ("accelerate", "brake"):
            if self.rate <= 0:
                raise ValueError(f"{self.kind} phase needs a positive rate")
            if self.target < 0:
                raise ValueError("target speed must be non-negative")
        elif self.duration <= 0:
            raise ValueError(f"{self.kind} phase needs a positive duration")


@dataclass(frozen=True)
class CycleSpec:
    """A drive cycle: phases laid end to end, repeated until ``duration``.

    Speed ramps follow a sin^2 acceleration pulse with peak ``rate``, so
    v(t) is continuously differentiable.
    """

    duration: float
    phases: tuple[Phase, ...]
    sample_rate: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "phases", tuple(
            p if isinstance(p, Phase) else Phase(**p) for p in self.phases))
        if self.duration <= 0:
            raise ValueError("cycle duration must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if not self.phases:
            raise ValueError("cycle needs at least one phase")


def default_cycle(duration: float = 900.0, noise_sigma: float = 0.0, seed: int = 0,
                  sample_rate: float = 1.0) -> CycleSpec:
    """Mixed urban/highway cycle, 900 s per pass."""
    P = Phase
    phases = (
        P("idle", duration=25),
        P("accelerate", 14, 1.6), P("cruise", duration=35),
        P("brake", 0, 1.8), P("idle", duration=15),
        P("accelerate", 20, 1.2), P("cruise", duration=50),
        P("accelerate", 28, 0.8), P("cruise", duration=70),
        P("brake", 16, 1.0), P("cruise", duration=40),
        P("accelerate", 24, 1.0), P("cruise", duration=55),
        P("brake", 0, 2.0), P("idle", duration=20),
        P("accelerate", 10, 1.4), P("cruise", duration=30),
        P("accelerate", 18, 1.0), P("cruise", duration=45),
        P("brake", 6, 1.2), P("cruise", duration=25),
        P("accelerate", 32, 1.1), P("cruise", duration=110),
        P("brake", 12, 1.5), P("cruise", duration=35),
        P("brake", 0, 1.3), P("idle", duration=52),
    )
    return CycleSpec(duration, phases, sample_rate, noise_sigma, seed)


def _profile(spec: CycleSpec):
    """Piecewise (start, end, kind, v0, dv, rate) segments covering ``duration``."""
    segments = []
    t, v = 0.0, 0.0
    has_idle = has_brake = False
    while t < spec.duration:
        for ph in spec.phases:
            if ph.kind in ("cruise", "idle"):
                if ph.kind == "idle" and v != 0.0:
                    raise ValueError("idle phase requires the vehicle to be stopped")
                segments.append((t, t + ph.duration, "hold", v, 0.0, 0.0))
                t += ph.duration
                has_idle |= ph.kind == "idle"
                continue
            dv = ph.target - v
            if ph.kind == "accelerate" and dv <= 0:
                raise ValueError(f"accelerate target {ph.target} not above current speed {v}")
            if ph.kind == "brake" and dv >= 0:
                raise ValueError(f"brake target {ph.target} not below current speed {v}")
            length = 2.0 * abs(dv) / ph.rate
            segments.append((t, t + length, "ramp", v, dv, math.copysign(ph.rate, dv)))
            t += length
            v = ph.target
            has_brake |= ph.kind == "brake"
            if t >= spec.duration:
                break
    if not has_idle:
        raise ValueError("cycle needs at least one idle phase")
    moves = any(seg[2] == "ramp" for seg in segments)
    if moves and not has_brake:
        raise ValueError("cycle needs at least one braking phase")
    return segments


def speed_profile(spec: CycleSpec, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic speed and acceleration of the cycle at times ``t``."""
    t = np.asarray(t, dtype=float)
    v = np.zeros_like(t)
    a = np.zeros_like(t)
    for start, end, kind, v0, dv, rate in _profile(spec):
        sel = (t >= start) & (t < end)
        if not np.any(sel):
            continue
        if kind == "hold":
            v[sel] = v0
            continue
        T = end - start
        tau = t[sel] - start
        a[sel] = rate * np.sin(math.pi * tau / T) ** 2
        v[sel] = v0 + rate * (tau / 2.0 - T / (4.0 * math.pi) * np.sin(2.0 * math.pi * tau / T))
    return np.maximum(v, 0.0), a


def synth_cycle(spec: CycleSpec, fixed: FixedParams, phys: PhysParams) -> DriveLog:
    """Sample the cycle and compute its battery power from the dynamics model."""
    moves = any(p.kind == "accelerate" for p in spec.phases)
    hard_brake = any(p.kind == "brake" and -p.rate < fixed.beta for p in spec.phases)
    if moves and not hard_brake:
        raise ValueError("cycle needs a braking phase harder than the regen threshold")
    n = int(round(spec.duration * spec.sample_rate))
    if n < 1:
        raise ValueError("cycle yields no samples")
    t = np.arange(n) / spec.sample_rate
    v, a = speed_profile(spec, t)
    P = np.asarray(battery_power(v, a, fixed, phys), dtype=float)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        P = P + rng.normal(0.0, spec.noise_sigma * float(P.max() - P.min()), size=n)
    return DriveLog(t, v, P=P, dvdt=a)


# -- normalization and splits ------------------------------------------------

@dataclass(frozen=True)
class Scales:
    t_min: float
    t_max: float
    v_min: float
    v_max: float
    P_scale: float

    @staticmethod
    def _unit(x, lo: float, hi: float):
        if hi == lo:
            return np.zeros_like(np.asarray(x, dtype=float))
        return (np.asarray(x, dtype=float) - lo) / (hi - lo)

    def norm_t(self, t):
        return self._unit(t, self.t_min, self.t_max)

    def norm_v(self, v):
        return self._unit(v, self.v_min, self.v_max)

    def norm_P(self, P):
        return np.asarray(P, dtype=float) / self.P_scale

    def denorm_P(self, P_norm):
        return np.asarray(P_norm, dtype=float) * self.P_scale

    def inputs(self, v, t) -> np.ndarray:
        return np.stack([self.norm_v(v), self.norm_t(t)], axis=-1)

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("t_min", "t_max", "v_min", "v_max", "P_scale")}


@dataclass
class NormalizedDataset:
    t: np.ndarray
    v: np.ndarray
    dvdt: np.ndarray
    P: np.ndarray
    scales: Scales
    train_mask: np.ndarray = field(repr=False)

    @property
    def inputs(self) -> np.ndarray:
        return self.scales.inputs(self.v, self.t)

    @property
    def targets(self) -> np.ndarray:
        return self.scales.norm_P(self.P)

    def __len__(self) -> int:
        return len(self.t)

    def subset(self, idx) -> NormalizedDataset:
        return replace(self, t=self.t[idx], v=self.v[idx], dvdt=self.dvdt[idx], P=self.P[idx],
                       train_mask=self.train_mask[idx])

    @property
    def train(self) -> NormalizedDataset:
        return self.subset(self.train_mask)

    @property
    def val(self) -> NormalizedDataset:
        return self.subset(~self.train_mask)


def normalize(log: DriveLog, training_mask=None, accel_window: int = 5) -> NormalizedDataset:
    """Scale inputs to [0, 1] and power by max |P|, using training rows only."""
    if log.P is None:
        raise ValueError("no ground-truth power in log")
    n = len(log)
    mask = np.ones(n, bool) if training_mask is None else np.asarray(training_mask, bool)
    if mask.shape != (n,) or not mask.any():
        raise ValueError("training mask must be non-empty and match the log")
    p_scale = float(np.max(np.abs(log.P[mask])))
    if p_scale == 0.0:
        raise ValueError("degenerate log: zero power range")
    scales = Scales(float(log.t[mask].min()), float(log.t[mask].max()),
                    float(log.v[mask].min()), float(log.v[mask].max()), p_scale)
    dvdt = log.dvdt if log.dvdt is not None else estimate_accel(log, accel_window)
    return NormalizedDataset(log.t.copy(), log.v.copy(), np.asarray(dvdt, float).copy(),
                             log.P.copy(), scales, mask.copy())


def holdout_mask(n: int, val_fraction: float, seed: int = 0) -> np.ndarray:
    """Training mask with one contiguous validation window placed by ``seed``."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("validation fraction must lie strictly between 0 and 1")
    n_val = int(round(n * val_fraction))
    if n_val < 1 or n_val >= n:
        raise ValueError(f"validation fraction {val_fraction} leaves an empty split for n={n}")
    start = int(np.random.default_rng(seed).integers(0, n - n_val + 1))
    mask = np.ones(n, bool)
    mask[start:start + n_val] = False
    return mask


def split(dataset: NormalizedDataset, val_fraction: float, seed: int = 0):
    """(train, val) subsets around a contiguous held-out time window."""
    mask = holdout_mask(len(dataset), val_fraction, seed)
    return dataset.subset(mask), dataset.subset(~mask)


def prepare_dataset(log: DriveLog, val_fraction: float = 0.2, seed: int = 0,
                    accel_window: int = 5) -> NormalizedDataset:
    """Hold out a validation window, then normalize on the remaining rows."""
    return normalize(log, holdout_mask(len(log), val_fraction, seed), accel_window)


def summarize(log: DriveLog) -> str:
    parts = [f"samples={len(log)}", f"duration={log.duration:.1f}s"]
    if log.P is not None:
        parts.append(f"P=[{log.P.min():.1f}, {log.P.max():.1f}] W")
    return " ".join(parts)

