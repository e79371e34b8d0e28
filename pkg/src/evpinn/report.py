"""Per-epoch loss records shared by the PINN and RKNN trainers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

MILESTONES = (1, 10, 100, 1000, 10000)


@dataclass
class LossReport:
    """Per-epoch loss decomposition for each split."""

    records: list[tuple[int, str, float, float, float]] = field(default_factory=list)

    def add(self, epoch: int, split: str, total: float, data: float, physics: float) -> None:
        self.records.append((epoch, split, float(total), float(data), float(physics)))

    def series(self, split: str, column: str = "total") -> np.ndarray:
        j = {"total": 2, "data": 3, "physics": 4}[column]
        return np.array([r[j] for r in self.records if r[1] == split])

    def at(self, epoch: int, split: str = "train") -> tuple[float, float, float]:
        for r in self.records:
            if r[0] == epoch and r[1] == split:
                return r[2], r[3], r[4]
        raise KeyError(f"no {split} record at epoch {epoch}")

    def final(self, split: str = "train") -> tuple[float, float, float]:
        rows = [r for r in self.records if r[1] == split]
        if not rows:
            raise KeyError(f"no {split} records")
        return rows[-1][2:]

    @property
    def epochs(self) -> list[int]:
        return sorted({r[0] for r in self.records})

    def milestones(self) -> list[tuple[int, str, float, float, float]]:
        return [r for r in self.records if r[0] in MILESTONES]

    def write_csv(self, stream: TextIO | str | Path) -> None:
        if not hasattr(stream, "write"):
            with open(stream, "w", newline="") as fh:
                return self.write_csv(fh)
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["epoch", "split", "total", "data", "physics"])
        for r in self.records:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), repr(r[4])])

    @classmethod
    def read_csv(cls, stream: TextIO | str | Path) -> LossReport:
        if not hasattr(stream, "read"):
            with open(stream, newline="") as fh:
                return cls.read_csv(fh)
        rows = list(csv.DictReader(stream))
        report = cls()
        for r in rows:
            report.add(int(r["epoch"]), r["split"], float(r["total"]), float(r["data"]),
                       float(r["physics"]))
        return report
