"""Physics-informed power model: a tanh MLP from (speed, time) to battery
power, trained jointly with the five physical vehicle parameters."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace
from typing import TextIO

import numpy as np

from .autodiff import Tape, Var
from .data import NormalizedDataset, Scales
from .dynamics import (
    PARAM_NAMES,
    FixedParams,
    PhysParams,
    VehiclePreset,
    battery_power,
    clamp_params,
)
from .nn import (
    Network,
    ParamGroup,
    lift_params,
    load_networks,
    mlp_apply,
    mlp_forward,
    mlp_new,
    save_networks,
    step_groups,
)
from .report import MILESTONES, LossReport

log = logging.getLogger(__name__)

class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class PinnConfig:
    lam: float = 0.1
    epochs: int = 10000
    lr_net: float = 1e-3
    lr_phys: float = 1e-2
    layer_sizes: tuple[int, ...] = (2, 128, 128, 128, 128, 1)
    seed: int = 0
    clip_norm: float = 10.0
    val_fraction: float = 0.2
    phys_warmup: int = 0  # epochs with the physical parameters frozen
    collocation: str = "all"  # rows carrying the physics residual: "all" or "train"
    anchor_scale: bool = True  # hold eta * m * C_d at its starting value

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lr_net < 0 or self.lr_phys < 0:
            raise ValueError("learning rates must be non-negative")
        if self.collocation not in ("all", "train"):
            raise ValueError("collocation must be 'all' or 'train'")
        if self.phys_warmup < 0:
            raise ValueError("phys_warmup must be non-negative")
        if self.layer_sizes[0] != 2 or self.layer_sizes[-1] != 1:
            raise ValueError("the power network maps (v, t) to one output")


@dataclass
class PinnModel:
    """Network plus physical parameters.

    The physical parameters are stored as multipliers of ``reference``
    (the preset's initial guess) so that all five are O(1) for the optimizer.
    """

    net: Network
    multipliers: np.ndarray
    reference: PhysParams
    fixed: FixedParams
    scales: Scales

    @property
    def phys(self) -> PhysParams:
        return PhysParams.from_array(self.multipliers * self.reference.as_array())

    def set_phys(self, values) -> None:
        self.multipliers = clamp_params(np.asarray(values, float)) / self.reference.as_array()


def new_model(preset: VehiclePreset, scales: Scales, config: PinnConfig) -> PinnModel:
    return PinnModel(
        mlp_new(config.layer_sizes, "tanh", config.seed),
        np.ones(len(PARAM_NAMES)),
        preset.initial,
        preset.fixed,
        scales,
    )


# -- losses ------------------------------------------------------------------

def _phys_vars(tape: Tape, model: PinnModel, qs=None) -> tuple[list[Var], SimpleNamespace]:
    if qs is None:
        qs = [tape.lift(float(q)) for q in model.multipliers]
    ref = model.reference.as_array()
    return qs, SimpleNamespace(**{n: q * float(r) for n, q, r in zip(PARAM_NAMES, qs, ref)})


def _columns(batch: NormalizedDataset):
    return batch.v[:, None], batch.dvdt[:, None]


def physics_power_norm(batch: NormalizedDataset, model: PinnModel, phys=None):
    """Power implied by the dynamics at the batch's (v, dv/dt), in normalized units."""
    v, a = _columns(batch)
    return battery_power(v, a, model.fixed, model.phys if phys is None else phys) \
        / batch.scales.P_scale


def physics_residual(batch: NormalizedDataset, model: PinnModel, tape: Tape | None = None,
                     params=None, phys=None):
    """Network prediction minus dynamics-implied power, normalized, per sample.

    Without a tape returns a plain ``(N,)`` array; with one, an ``(N, 1)`` Var.
    """
    if tape is None:
        pred = mlp_apply(model.net, batch.inputs)
        return (pred - physics_power_norm(batch, model))[:, 0]
    pred = mlp_forward(model.net, batch.inputs, tape, params)
    return pred - physics_power_norm(batch, model, phys)


def _objective(tape: Tape, ds: NormalizedDataset, model: PinnModel, lam: float,
               collocation: str = "train", params=None, qs=None):
    """Training objective over the whole dataset in one forward pass.

    The data term uses rows in ``ds.train_mask``; the physics term uses the
    same rows, or every row when ``collocation == "all"`` (the residual
    needs only speed and acceleration, never measured power).  ``params``
    and ``qs`` may be supplied as already-lifted leaves.
    """
    mask = ds.train_mask
    if params is None:
        params = lift_params(model.net, tape)
    qs, phys = _phys_vars(tape, model, qs)
    pred = mlp_forward(model.net, ds.inputs, tape, params)
    y = np.where(mask, ds.targets, 0.0)[:, None]
    w_data = (mask / mask.sum())[:, None]
    data = (((pred - y) ** 2) * w_data).sum()
    resid = pred - physics_power_norm(ds, model, phys)
    if collocation == "all":
        w_phys = np.full((len(ds), 1), 1.0 / len(ds))
    else:
        w_phys = w_data
    physics = lam * (((resid**2) * w_phys).sum())
    return params, qs, data, physics, data + physics, pred.value[:, 0], resid.value[:, 0]


@dataclass(frozen=True)
class LossTerms:
    total: float
    data: float
    physics: float


def pinn_loss(batch: NormalizedDataset, model: PinnModel, lam: float) -> LossTerms:
    """Mean squared data misfit plus lambda-weighted mean squared physics residual."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    pred = mlp_apply(model.net, batch.inputs)[:, 0]
    data = float(np.mean((pred - batch.targets) ** 2))
    resid = pred - physics_power_norm(batch, model)[:, 0]
    physics = lam * float(np.mean(resid**2))
    return LossTerms(data + physics, data, physics)


def loss_gradients(dataset: NormalizedDataset, model: PinnModel, lam: float,
                   collocation: str = "train"):
    """(LossTerms of the objective, network gradients, multiplier gradients)."""
    tape = Tape()
    params, qs, data, physics, total, _, _ = _objective(tape, dataset, model, lam, collocation)
    grads = tape.backward(total)
    terms = LossTerms(total.value, data.value, physics.value)
    return terms, [grads[p.id] for p in params], np.array([grads[q.id] for q in qs])


def _split_terms(pred, resid, targets, rows, lam) -> LossTerms:
    data = float(np.mean((pred[rows] - targets[rows]) ** 2))
    physics = lam * float(np.mean(resid[rows] ** 2))
    return LossTerms(data + physics, data, physics)


# -- training ----------------------------------------------------------------

# Power depends on eta, m and C_d only through C_d/eta, m/eta, mu*m/eta and
# C_rr*m/eta, so scaling those three together by any k > 0 leaves every loss
# unchanged.  The gradient carries no information along that orbit, but Adam's
# per-coordinate normalization still wanders along it.
SCALE_ORBIT = tuple(PARAM_NAMES.index(n) for n in ("eta", "m", "C_d"))


def anchor_scale(multipliers: np.ndarray, log_product: float) -> np.ndarray:
    """Move along the scale orbit until sum(log q) over the orbit equals ``log_product``.

    The loss is exactly invariant under this move.
    """
    q = np.array(multipliers, float)
    idx = list(SCALE_ORBIT)
    k = np.exp((log_product - np.log(q[idx]).sum()) / len(idx))
    q[idx] *= k
    return q


def train_pinn(dataset: NormalizedDataset, config: PinnConfig, preset: VehiclePreset,
               model: PinnModel | None = None) -> tuple[PinnModel, LossReport]:
    """Full-batch Adam on network weights and physical parameters.

    Rows flagged in ``dataset.train_mask`` supply the data term; the rest
    form the validation split.  Epoch ``k`` records the losses of the state
    entering the ``k``-th update.
    """
    mask = dataset.train_mask
    targets = dataset.targets
    has_val = not mask.all()
    if model is None:
        model = new_model(preset, dataset.scales, config)
    groups = [
        ParamGroup("net", model.net.parameters(), config.lr_net),
        ParamGroup("phys", [model.multipliers], config.lr_phys),
    ]
    report = LossReport()
    gauge = float(np.log(model.multipliers[list(SCALE_ORBIT)]).sum())
    for epoch in range(1, config.epochs + 1):
        tape = Tape()
        try:
            params, qs, _, _, total, pred, resid = _objective(
                tape, dataset, model, config.lam, config.collocation)
            grads = tape.backward(total)
        except FloatingPointError as exc:
            raise TrainingDivergedError(_diagnose(epoch, dataset, model, str(exc))) from exc
        tr = _split_terms(pred, resid, targets, mask, config.lam)
        report.add(epoch, "train", tr.total, tr.data, tr.physics)
        if has_val:
            vt = _split_terms(pred, resid, targets, ~mask, config.lam)
            report.add(epoch, "val", vt.total, vt.data, vt.physics)
        g_net = [grads[p.id] for p in params]
        g_phys = np.array([grads[q.id] for q in qs])
        if epoch <= config.phys_warmup:
            step_groups(groups[:1], [g_net], config.clip_norm)
        else:
            step_groups(groups, [g_net, [g_phys]], config.clip_norm)
        model.net.set_parameters(groups[0].params)
        model.set_phys(groups[1].params[0] * model.reference.as_array())
        if config.anchor_scale:
            # a bound that is active after the move wins over the anchor
            model.set_phys(anchor_scale(model.multipliers, gauge) * model.reference.as_array())
        groups[1].params[0] = model.multipliers.copy()
        if epoch in MILESTONES or epoch == config.epochs:
            log.info("epoch %d train total %.6g data %.6g physics %.6g", epoch,
                     tr.total, tr.data, tr.physics)
    return model, report


def _diagnose(epoch, batch, model, message) -> str:
    parts = [f"epoch {epoch}: {message}"]
    with np.errstate(all="ignore"):
        pred = mlp_apply(model.net, batch.inputs)
        if not np.all(np.isfinite(pred)):
            parts.append("component 'data' (network output non-finite), group 'net'")
        else:
            phys = physics_power_norm(batch, model)
            if not np.all(np.isfinite(phys)):
                parts.append(f"component 'physics', group 'phys' ({model.phys})")
            else:
                parts.append("component 'total'")
    return "; ".join(parts)


# -- inference and reporting -------------------------------------------------

def predict_power(model: PinnModel, v, t) -> np.ndarray:
    """Battery power in watts.

    Inputs far outside the training ranges extrapolate and are unreliable.
    """
    x = model.scales.inputs(np.asarray(v, float), np.asarray(t, float))
    single = x.ndim == 1
    out = mlp_apply(model.net, x[None, :] if single else x)[..., 0]
    power = model.scales.denorm_P(out)
    return float(power[0]) if single else power


@dataclass(frozen=True)
class ParamRow:
    name: str
    reference: float
    predicted: float

    @property
    def abs_error(self) -> float:
        return abs(self.predicted - self.reference)

    @property
    def rel_error(self) -> float:
        return self.abs_error / abs(self.reference)


def compare_params(predicted: PhysParams, reference: PhysParams) -> list[ParamRow]:
    return [ParamRow(n, getattr(reference, n), getattr(predicted, n)) for n in PARAM_NAMES]


def extract_params(model: PinnModel, reference: PhysParams | None = None):
    """Current physical parameters and their error table against ``reference``
    (default: the initial guess the model started from)."""
    phys = model.phys
    return phys, compare_params(phys, reference or model.reference)


def write_param_table(rows: list[ParamRow], stream: TextIO | str | Path) -> None:
    if not hasattr(stream, "write"):
        with open(stream, "w", newline="") as fh:
            return write_param_table(rows, fh)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["parameter", "reference", "predicted", "abs_error", "rel_error_pct"])
    for r in rows:
        w.writerow([r.name, repr(r.reference), repr(r.predicted), repr(r.abs_error),
                    f"{100 * r.rel_error:.4f}"])


# -- persistence -------------------------------------------------------------

def save_pinn(model: PinnModel, path: str | Path) -> None:
    """``path`` gets the network; ``path`` with a .json suffix the sidecar."""
    path = Path(path)
    save_networks(path, [model.net])
    sidecar = {
        "kind": "pinn",
        "format": "EVPINN-MODEL-v1",
        "phys": model.phys.to_dict(),
        "reference": model.reference.to_dict(),
        "fixed": model.fixed.to_dict(),
        "scales": model.scales.to_dict(),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_pinn(path: str | Path) -> PinnModel:
    path = Path(path)
    (net,) = load_networks(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("kind") != "pinn":
        raise ValueError(f"{path} is not a PINN model")
    reference = PhysParams(**meta["reference"])
    model = PinnModel(net, np.ones(len(PARAM_NAMES)), reference, FixedParams(**meta["fixed"]),
                      Scales(**meta["scales"]))
    model.set_phys(PhysParams(**meta["phys"]).as_array())
    return model
