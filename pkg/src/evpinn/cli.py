"""``evpinn`` command line: synth, train, eval, predict.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .data import DriveLog, LogFormatError, load_log, prepare_dataset, save_log, summarize, synth_cycle
from .pinn import (
    PinnModel,
    TrainingDivergedError,
    extract_params,
    load_pinn,
    predict_power,
    save_pinn,
    train_pinn,
    write_param_table,
)
from .rknn import PowerTrace, load_rknn, predict_energy, rk4_integrate, save_rknn, train_rknn

log = logging.getLogger("evpinn")

CONFIG_COPY = "config.json"
PINN_FILE = "pinn_model.bin"
RKNN_FILE = "rknn_model.bin"


class UsageError(Exception):
    """Bad input that is the caller's to fix (exit code 2)."""


def _read_log(path: str | Path) -> DriveLog:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"data not found: {path}")
    with open(path, newline="") as fh:
        return load_log(fh)


def _load_data(cfg: RunConfig) -> DriveLog:
    if cfg.data.path is not None:
        return _read_log(cfg.data.path)
    if cfg.data.cycle is None:
        raise UsageError("config has no data: set data.path or data.cycle")
    preset = cfg.preset()
    try:
        return synth_cycle(cfg.data.cycle.spec(), preset.fixed, cfg.data.truth_params(preset))
    except ValueError as exc:
        raise ConfigError(f"data.cycle: {exc}") from exc


def _out_dir(cfg: RunConfig, override: str | None) -> Path:
    out = Path(override or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _uniform_dt(t: np.ndarray) -> float:
    d = np.diff(t)
    if len(d) == 0 or np.ptp(d) > 1e-9 * max(1.0, float(d.mean())):
        raise ValueError("energy prediction needs a uniformly sampled log")
    return float(d.mean())


def _power_trace(model: PinnModel, drive: DriveLog) -> PowerTrace:
    return PowerTrace(drive.t, predict_power(model, drive.v, drive.t))


def _write_columns(path: Path, header: list[str], *columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(x)) for x in row])


# -- commands ----------------------------------------------------------------

def cmd_synth(cfg: RunConfig, text: str, args) -> int:
    if cfg.data.cycle is None:
        raise ConfigError("synth needs a data.cycle section")
    drive = _load_data(cfg)
    target = Path(args.out) if args.out else Path(cfg.output_dir) / "synthetic_log.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    save_log(drive, target)
    print(f"{target}: {summarize(drive)}")
    return 0


def cmd_train(cfg: RunConfig, text: str, args) -> int:
    drive = _load_data(cfg)
    out = _out_dir(cfg, args.out)
    (out / CONFIG_COPY).write_text(text)
    preset = cfg.preset()
    dataset = prepare_dataset(drive, cfg.pinn.val_fraction, cfg.pinn.seed, cfg.data.accel_window)

    model, report = train_pinn(dataset, cfg.pinn, preset)
    save_pinn(model, out / PINN_FILE)
    report.write_csv(out / "pinn_loss.csv")
    reference = cfg.data.truth_params(preset) if cfg.data.cycle is not None else None
    phys, rows = extract_params(model, reference)
    write_param_table(rows, out / "params.csv")
    log.info("pinn final train %s val %s", report.final("train"), report.final("val"))

    # the energy model sees the power the PINN predicts, not the measured power
    trace = _power_trace(model, drive)
    rknn, rknn_report = train_rknn(trace, _uniform_dt(drive.t), cfg.rknn)
    save_rknn(rknn, out / RKNN_FILE)
    rknn_report.write_csv(out / "rknn_loss.csv")
    print(f"trained: {phys}")
    print(f"artifacts in {out}")
    return 0


def _load_models(out: Path):
    for name in (PINN_FILE, RKNN_FILE):
        if not (out / name).exists():
            raise UsageError(f"model not found: {out / name} (run 'train' first)")
    return load_pinn(out / PINN_FILE), load_rknn(out / RKNN_FILE)


def _eval_log(cfg: RunConfig, args) -> DriveLog:
    return _read_log(args.log) if args.log else _load_data(cfg)


def cmd_eval(cfg: RunConfig, text: str, args) -> int:
    out = _out_dir(cfg, args.out)
    pinn, rknn = _load_models(Path(args.models) if args.models else out)
    drive = _eval_log(cfg, args)
    if drive.P is None:
        raise ValueError("cannot evaluate without P (log has no power or voltage/current columns)")
    dt = _uniform_dt(drive.t)
    if abs(dt - rknn.dt) > 1e-9 * max(1.0, dt):
        raise ValueError(f"log spacing {dt} s does not match the energy model's step {rknn.dt} s")

    p_pred = predict_power(pinn, drive.v, drive.t)
    _write_columns(out / "power_pred.csv", ["t_s", "p_true_w", "p_pred_w"], drive.t, drive.P, p_pred)
    e_true = rk4_integrate(PowerTrace(drive.t, drive.P), dt)
    e_pred = predict_energy(rknn, PowerTrace(drive.t, p_pred))
    _write_columns(out / "energy_pred.csv", ["t_s", "e_rk4_true_j", "e_pred_j"],
                   e_true.t, e_true.E, e_pred.E)

    scale = pinn.scales.P_scale
    metrics = {
        "power_mse_normalized": float(np.mean(((p_pred - drive.P) / scale) ** 2)),
        "energy_terminal_true_j": float(e_true.E[-1]),
        "energy_terminal_pred_j": float(e_pred.E[-1]),
        "energy_terminal_rel_error": float(abs(e_pred.E[-1] - e_true.E[-1])
                                           / max(abs(e_true.E[-1]), 1e-12)),
        "samples": len(drive),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    print(json.dumps(metrics))
    return 0


def cmd_predict(cfg: RunConfig, text: str, args) -> int:
    out = _out_dir(cfg, args.out)
    pinn, rknn = _load_models(Path(args.models) if args.models else out)
    drive = _eval_log(cfg, args)
    trace = _power_trace(pinn, drive)
    energy = predict_energy(rknn, trace)
    _write_columns(out / "prediction.csv", ["t_s", "p_pred_w", "e_pred_j"],
                   drive.t, trace.P, energy.E)
    print(f"{out / 'prediction.csv'}: terminal energy {energy.E[-1]:.1f} J")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evpinn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", help="output directory (synth: output CSV path)")
        if name in ("eval", "predict"):
            p.add_argument("--log", help="drive log CSV (default: the config's data)")
            p.add_argument("--models", help="directory holding the trained models "
                                            "(default: the output directory)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, text = load_config(args.config)
        return COMMANDS[args.command](cfg, text, args)
    except (ConfigError, UsageError, LogFormatError) as exc:
        print(f"evpinn: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, ValueError, OSError, FloatingPointError) as exc:
        print(f"evpinn: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
