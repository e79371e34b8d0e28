"""Cumulative energy from power.

``rk4_integrate`` is the classical fourth-order Runge-Kutta oracle for
dE/dt = P(t).  ``RknnModel`` replaces each RK4 stage by a small network
(k1 from P(t); k2..k4 from a power sample and the stage's energy
argument) and combines the stages with the usual 1/6, 1/3, 1/3, 1/6
weights.  ``train_baseline_dnn`` fits a single network of matching size
that maps the same information straight to E(t + dt).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, TextIO

import numpy as np

from .autodiff import Tape
from .data import holdout_mask
from .nn import (
    Network,
    ParamGroup,
    lift_params,
    load_networks,
    mlp_apply,
    mlp_forward,
    mlp_new,
    param_count,
    save_networks,
    step_groups,
)
from .report import LossReport

_TIME_TOL = 1e-9


class RangeError(ValueError):
    """Power was requested outside the sampled time range."""


@dataclass
class PowerTrace:
    """Sampled power, linearly interpolated between samples."""

    t: np.ndarray
    P: np.ndarray

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        if self.t.shape != self.P.shape or self.t.ndim != 1:
            raise ValueError("t and P must be 1-D and of equal length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def __call__(self, tq):
        tq_arr = np.asarray(tq, dtype=float)
        if len(self.t) == 0:
            raise RangeError("empty power trace")
        tol = _TIME_TOL * max(1.0, abs(self.t[-1]))
        if np.any(tq_arr < self.t[0] - tol) or np.any(tq_arr > self.t[-1] + tol):
            raise RangeError(f"time outside sampled range [{self.t[0]}, {self.t[-1]}]")
        out = np.interp(tq_arr, self.t, self.P)
        return float(out) if out.ndim == 0 else out

    @property
    def spacing(self) -> float | None:
        if len(self.t) < 2:
            return None
        d = np.diff(self.t)
        if np.ptp(d) > _TIME_TOL * max(1.0, float(d.mean())) * 1e3:
            raise ValueError("power trace is not uniformly sampled")
        return float(d.mean())


@dataclass
class EnergySeries:
    t: np.ndarray
    E: np.ndarray
    dt: float

    def write_csv(self, stream: TextIO | str | Path) -> None:
        if not hasattr(stream, "write"):
            with open(stream, "w", newline="") as fh:
                return self.write_csv(fh)
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["t_s", "e_j"])
        for t, e in zip(self.t, self.E):
            w.writerow([repr(float(t)), repr(float(e))])


# -- RK4 oracle ----------------------------------------------------------------

def rk4_step(f: Callable[[float, float], float], t: float, y: float, dt: float) -> float:
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _n_steps(t0: float, t_end: float, dt: float) -> int:
    return int(math.floor((t_end - t0) / dt + 1e-9))


def rk4_integrate(power, dt: float, E0: float = 0.0, t0: float | None = None,
                  t_end: float | None = None) -> EnergySeries:
    """Integrate power to cumulative energy with fixed-step RK4.

    ``power`` is a :class:`PowerTrace` (range taken from its samples) or a
    callable ``P(t)`` together with ``t_end``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(power, PowerTrace):
        if len(power) == 0:
            raise ValueError("empty power trace")
        t0 = power.t[0] if t0 is None else t0
        t_end = power.t[-1] if t_end is None else t_end
    elif t_end is None:
        raise ValueError("t_end is required for a callable power source")
    t0 = 0.0 if t0 is None else float(t0)
    n = _n_steps(t0, float(t_end), dt)
    f = lambda t, E: power(t)  # noqa: E731  (dE/dt = P(t), state-free)
    t = t0 + dt * np.arange(n + 1)
    E = np.empty(n + 1)
    E[0] = E0
    for i in range(n):
        E[i + 1] = rk4_step(f, t[i], E[i], dt)
    return EnergySeries(t, E, dt)


# -- RKNN --------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyScales:
    P_scale: float
    T_total: float

    @property
    def E_scale(self) -> float:
        return self.P_scale * self.T_total

    def to_dict(self) -> dict:
        return {"P_scale": self.P_scale, "T_total": self.T_total}


@dataclass
class RknnConfig:
    epochs: int = 10000
    lr: float = 1e-2
    hidden: tuple[int, ...] = (32, 32, 32)
    seed: int = 0
    val_fraction: float = 0.2
    clip_norm: float = 10.0

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


STAGE_WEIGHTS = (1.0, 2.0, 2.0, 1.0)


@dataclass
class RknnModel:
    nets: list[Network]
    dt: float
    scales: EnergyScales

    def __post_init__(self) -> None:
        if len(self.nets) != 4:
            raise ValueError("an RKNN has exactly four stage networks")
        if self.nets[0].sizes[0] != 1 or any(n.sizes[0] != 2 for n in self.nets[1:]):
            raise ValueError("stage 1 takes P; stages 2-4 take (P, E)")

    def n_params(self) -> int:
        return sum(n.n_params() for n in self.nets)

    def stages(self) -> list[Callable]:
        """Stage functions on normalized numbers: k1(P), k_i(P, E)."""
        n1, n2, n3, n4 = self.nets
        return [
            lambda p: mlp_apply(n1, np.array([[p]]))[0, 0],
            lambda p, e: mlp_apply(n2, np.array([[p, e]]))[0, 0],
            lambda p, e: mlp_apply(n3, np.array([[p, e]]))[0, 0],
            lambda p, e: mlp_apply(n4, np.array([[p, e]]))[0, 0],
        ]


def new_rknn(dt: float, scales: EnergyScales, config: RknnConfig) -> RknnModel:
    nets = [
        mlp_new((1, *config.hidden, 1), "tanh", config.seed),
        *(mlp_new((2, *config.hidden, 1), "tanh", config.seed + i) for i in (1, 2, 3)),
    ]
    return RknnModel(nets, dt, scales)


def staged_step(stages: Sequence[Callable], p0: float, p_mid: float, p1: float, e: float,
                h: float) -> float:
    """One RKNN step in normalized units with step ``h``."""
    k1 = stages[0](p0)
    k2 = stages[1](p_mid, e + h / 2 * k1)
    k3 = stages[2](p_mid, e + h / 2 * k2)
    k4 = stages[3](p1, e + h * k3)
    return e + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rknn_step(model: RknnModel, sampler, t: float, E: float) -> float:
    """Energy at ``t + dt`` (J) from energy ``E`` (J) at ``t``."""
    s = model.scales
    p0, p_mid, p1 = (sampler(t) / s.P_scale, sampler(t + model.dt / 2) / s.P_scale,
                     sampler(t + model.dt) / s.P_scale)
    h = model.dt / s.T_total
    return staged_step(model.stages(), p0, p_mid, p1, E / s.E_scale, h) * s.E_scale


def _check_dt(trace: PowerTrace, dt: float) -> None:
    spacing = trace.spacing
    if spacing is not None and abs(spacing - dt) > 1e-9 * max(1.0, dt):
        raise ValueError(f"trace spacing {spacing} does not match model dt {dt}")


def predict_energy(model: RknnModel, trace: PowerTrace, E0: float = 0.0) -> EnergySeries:
    """Roll the RKNN forward over ``trace`` from ``E0``."""
    if len(trace) == 0:
        return EnergySeries(np.array([0.0]), np.array([float(E0)]), model.dt)
    _check_dt(trace, model.dt)
    n = _n_steps(trace.t[0], trace.t[-1], model.dt)
    t = trace.t[0] + model.dt * np.arange(n + 1)
    s = model.scales
    p = trace(t) / s.P_scale
    p_mid = trace(t[:-1] + model.dt / 2) / s.P_scale if n else np.empty(0)
    stages = model.stages()
    h = model.dt / s.T_total
    e = np.empty(n + 1)
    e[0] = E0 / s.E_scale
    for i in range(n):
        e[i + 1] = staged_step(stages, p[i], p_mid[i], p[i + 1], e[i], h)
    return EnergySeries(t, e * s.E_scale, model.dt)


# -- training ----------------------------------------------------------------

@dataclass
class StepData:
    """Teacher-forced one-step samples, normalized."""

    p0: np.ndarray
    p_mid: np.ndarray
    p1: np.ndarray
    e0: np.ndarray
    e1: np.ndarray
    h: float


def step_data(trace: PowerTrace, dt: float, scales: EnergyScales) -> StepData:
    """Pair each step's power samples with the RK4 oracle's energies."""
    oracle = rk4_integrate(trace, dt)
    t = oracle.t
    if len(t) < 3:
        raise ValueError("need at least two integration steps")
    P = scales.P_scale
    return StepData(
        trace(t[:-1]) / P,
        trace(t[:-1] + dt / 2) / P,
        trace(t[1:]) / P,
        oracle.E[:-1] / scales.E_scale,
        oracle.E[1:] / scales.E_scale,
        dt / scales.T_total,
    )


def _energy_scales(trace: PowerTrace) -> EnergyScales:
    p_scale = float(np.max(np.abs(trace.P)))
    if p_scale == 0.0:
        p_scale = 1.0
    return EnergyScales(p_scale, float(trace.t[-1] - trace.t[0]))


def _col(x) -> np.ndarray:
    return np.asarray(x, dtype=float)[:, None]


_PICK_P = np.array([[1.0, 0.0]])
_PICK_E = np.array([[0.0, 1.0]])


def _rknn_graph(tape: Tape, model: RknnModel, d: StepData, rows: np.ndarray):
    params = [lift_params(net, tape) for net in model.nets]
    p0, pm, p1, e0 = _col(d.p0[rows]), _col(d.p_mid[rows]), _col(d.p1[rows]), _col(d.e0[rows])
    h = d.h

    def stage(i, p_col, e_arg):
        x = tape.const(p_col @ _PICK_P) + e_arg @ _PICK_E
        return mlp_forward(model.nets[i], x, tape, params[i])

    k1 = mlp_forward(model.nets[0], p0, tape, params[0])
    k2 = stage(1, pm, e0 + (h / 2) * k1)
    k3 = stage(2, pm, e0 + (h / 2) * k2)
    k4 = stage(3, p1, e0 + h * k3)
    e_next = e0 + (h / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    loss = ((e_next - _col(d.e1[rows])) ** 2).mean()
    return params, loss


def rknn_loss(model: RknnModel, d: StepData, rows=None) -> float:
    """Mean squared one-step energy error in normalized units."""
    rows = np.ones(len(d.p0), bool) if rows is None else rows
    stages = model.stages()
    err = [staged_step(stages, d.p0[i], d.p_mid[i], d.p1[i], d.e0[i], d.h) - d.e1[i]
           for i in np.flatnonzero(rows)]
    return float(np.mean(np.square(err)))


def _fast_rknn_loss(model: RknnModel, d: StepData, rows: np.ndarray) -> float:
    p0, pm, p1, e0 = _col(d.p0[rows]), _col(d.p_mid[rows]), _col(d.p1[rows]), _col(d.e0[rows])
    n1, n2, n3, n4 = model.nets
    h = d.h
    k1 = mlp_apply(n1, p0)
    k2 = mlp_apply(n2, np.hstack([pm, e0 + h / 2 * k1]))
    k3 = mlp_apply(n3, np.hstack([pm, e0 + h / 2 * k2]))
    k4 = mlp_apply(n4, np.hstack([p1, e0 + h * k3]))
    e_next = e0 + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(np.mean((e_next - _col(d.e1[rows])) ** 2))


def _train_loop(nets: Sequence[Network], graph, evaluate, train_rows, val_rows,
                config: RknnConfig) -> LossReport:
    groups = [ParamGroup(f"net{i}", net.parameters(), config.lr) for i, net in enumerate(nets)]
    report = LossReport()
    for epoch in range(1, config.epochs + 1):
        tape = Tape()
        params, loss = graph(tape, train_rows)
        grads = tape.backward(loss)
        value = float(loss.value)
        if not np.isfinite(value):
            raise FloatingPointError(f"epoch {epoch}: non-finite energy loss")
        report.add(epoch, "train", value, value, 0.0)
        if val_rows.any():
            v = evaluate(val_rows)
            report.add(epoch, "val", v, v, 0.0)
        step_groups(groups, [[grads[p.id] for p in ps] for ps in params], config.clip_norm)
        for net, group in zip(nets, groups):
            net.set_parameters(group.params)
    return report


def _split_rows(n: int, config: RknnConfig) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise ValueError("need at least two integration steps")
    train = holdout_mask(n, config.val_fraction, config.seed) if n >= 5 else np.ones(n, bool)
    return train, ~train


def train_rknn(trace: PowerTrace, dt: float, config: RknnConfig) -> tuple[RknnModel, LossReport]:
    """Fit the four stage networks to RK4 one-step energies (teacher forced)."""
    scales = _energy_scales(trace)
    d = step_data(trace, dt, scales)
    model = new_rknn(dt, scales, config)
    train_rows, val_rows = _split_rows(len(d.p0), config)

    def graph(tape, rows):
        return _rknn_graph(tape, model, d, rows)

    report = _train_loop(model.nets, graph, lambda rows: _fast_rknn_loss(model, d, rows),
                         train_rows, val_rows, config)
    return model, report


# -- plain DNN baseline ------------------------------------------------------

BASELINE_DEPTH = 4


def matched_width(target_params: int, n_in: int = 4, depth: int = BASELINE_DEPTH) -> int:
    """Hidden width whose ``depth``-layer network is closest to ``target_params``."""
    best = min(range(1, 1024),
               key=lambda w: abs(param_count((n_in, *[w] * depth, 1)) - target_params))
    return best


def _dnn_inputs(d: StepData, rows) -> np.ndarray:
    return np.stack([d.p0[rows], d.p_mid[rows], d.p1[rows], d.e0[rows]], axis=1)


def train_baseline_dnn(trace: PowerTrace, dt: float,
                       config: RknnConfig) -> tuple[Network, LossReport]:
    """Monolithic (P(t), P(t+dt/2), P(t+dt), E(t)) -> E(t+dt) network of
    roughly the RKNN's parameter count, trained identically."""
    scales = _energy_scales(trace)
    d = step_data(trace, dt, scales)
    rknn_size = new_rknn(dt, scales, config).n_params()
    width = matched_width(rknn_size)
    net = mlp_new((4, *[width] * BASELINE_DEPTH, 1), "tanh", config.seed)
    train_rows, val_rows = _split_rows(len(d.p0), config)

    def graph(tape, rows):
        params = lift_params(net, tape)
        pred = mlp_forward(net, _dnn_inputs(d, rows), tape, params)
        return [params], ((pred - _col(d.e1[rows])) ** 2).mean()

    def evaluate(rows):
        pred = mlp_apply(net, _dnn_inputs(d, rows))
        return float(np.mean((pred - _col(d.e1[rows])) ** 2))

    report = _train_loop([net], graph, evaluate, train_rows, val_rows, config)
    return net, report


# -- persistence -------------------------------------------------------------

def save_rknn(model: RknnModel, path: str | Path) -> None:
    path = Path(path)
    save_networks(path, model.nets)
    sidecar = {"kind": "rknn", "format": "EVPINN-MODEL-v1", "dt": model.dt,
               "scales": model.scales.to_dict()}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_rknn(path: str | Path) -> RknnModel:
    path = Path(path)
    nets = load_networks(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("kind") != "rknn":
        raise ValueError(f"{path} is not an RKNN model")
    return RknnModel(nets, float(meta["dt"]), EnergyScales(**meta["scales"]))
