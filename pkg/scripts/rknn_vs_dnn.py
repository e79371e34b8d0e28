"""Energy-integration comparison: RKNN against a plain network of matched size.

Both models learn one-step energy updates of the RK4 oracle on the same
synthetic power trace.  Per-seed loss CSVs and a summary go to ``--out``.

    python3 scripts/rknn_vs_dnn.py --seeds 0 1 2 3 4 --out runs/energy
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from evpinn.data import default_cycle, synth_cycle
from evpinn.dynamics import PRESETS, PhysParams
from evpinn.report import MILESTONES
from evpinn.rknn import PowerTrace, RknnConfig, train_baseline_dnn, train_rknn


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=10000)
    ap.add_argument("--out", type=Path, default=Path("runs/energy"))
    args = ap.parse_args()

    preset = PRESETS["model3lr"]
    log = synth_cycle(default_cycle(900, 0.01, 0), preset.fixed,
                      PhysParams(0.72, 0.65, 1900.0, 0.010, 0.24))
    trace = PowerTrace(log.t, log.P)
    args.out.mkdir(parents=True, exist_ok=True)
    finals = {"rknn": [], "dnn": []}
    for seed in args.seeds:
        cfg = RknnConfig(seed=seed, epochs=args.epochs)
        rknn, r_rep = train_rknn(trace, 1.0, cfg)
        dnn, d_rep = train_baseline_dnn(trace, 1.0, cfg)
        r_rep.write_csv(args.out / f"rknn_loss_seed{seed}.csv")
        d_rep.write_csv(args.out / f"dnn_loss_seed{seed}.csv")
        finals["rknn"].append(r_rep.final("val")[0])
        finals["dnn"].append(d_rep.final("val")[0])
        print(f"seed {seed}: {rknn.n_params()} vs {dnn.n_params()} parameters")
        for epoch in [e for e in MILESTONES if e <= args.epochs]:
            print(f"  epoch {epoch:>5}  rknn val {r_rep.at(epoch, 'val')[0]:.4e}"
                  f"  dnn val {d_rep.at(epoch, 'val')[0]:.4e}")
    print(f"median final val: rknn {np.median(finals['rknn']):.4e}  dnn {np.median(finals['dnn']):.4e}")


if __name__ == "__main__":
    main()
