"""Checkpoint tables and curve statistics over a metrics CSV."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .runner import read_metrics


def accuracy_curves(rows) -> dict[str, dict[int, dict[int, float]]]:
    """``{sweep label: {seed: {round: accuracy}}}`` over rows with status ok, in file order."""
    curves: dict[str, dict[int, dict[int, float]]] = {}
    for row in rows:
        if row["status"] != "ok" or row["accuracy"] == "":
            continue
        curves.setdefault(row["sweep"], {}).setdefault(int(row["seed"]), {})[int(row["round"])] = float(row["accuracy"])
    return curves


def mean_curve(per_seed: dict[int, dict[int, float]]) -> tuple[np.ndarray, np.ndarray]:
    """Rounds recorded by every seed and the seed-mean accuracy at each."""
    common = sorted(set.intersection(*(set(c) for c in per_seed.values())))
    acc = np.array([np.mean([per_seed[s][r] for s in per_seed]) for r in common])
    return np.array(common, dtype=int), acc


def final_accuracy(path) -> dict[str, tuple[float, list[float]]]:
    """Seed-mean accuracy at each run's last recorded round, per sweep label."""
    out = {}
    for label, per_seed in accuracy_curves(read_metrics(path)).items():
        finals = [c[max(c)] for _, c in sorted(per_seed.items())]
        out[label] = (float(np.mean(finals)), finals)
    return out


def final_epsilon(path) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for row in read_metrics(path):
        if row["status"] == "ok":
            out[row["sweep"]] = float(row["epsilon"]) if row["epsilon"] else None
    return out


def rounds_to_threshold(path, threshold: float) -> dict[str, int | None]:
    """First round at which the seed-averaged accuracy curve reaches ``threshold``."""
    out = {}
    for label, per_seed in accuracy_curves(read_metrics(path)).items():
        rounds, acc = mean_curve(per_seed)
        hit = np.flatnonzero(acc >= threshold)
        out[label] = int(rounds[hit[0]]) if hit.size else None
    return out


@dataclass
class SummaryTable:
    experiment: str
    checkpoints: list[int]
    labels: list[str]
    # cells[label][checkpoint] = (mean, spread, n_seeds) or None when missing
    cells: dict[str, dict[int, tuple[float, float, int] | None]]
    missing: list[int] = field(default_factory=list)

    def value(self, label: str, checkpoint: int) -> float | None:
        cell = self.cells[label][checkpoint]
        return None if cell is None else cell[0]

    def to_text(self) -> str:
        head = ["round", *[lbl or "(run)" for lbl in self.labels]]
        body = []
        for cp in self.checkpoints:
            line = [str(cp)]
            for lbl in self.labels:
                cell = self.cells[lbl][cp]
                line.append("missing" if cell is None else f"{100 * cell[0]:.2f}% ± {100 * cell[1]:.2f}")
            body.append(line)
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
        lines = [f"{self.experiment}: accuracy at checkpoints (mean ± std over seeds)",
                 fmt(head), fmt(["-" * w for w in widths]), *map(fmt, body)]
        if self.missing:
            lines.append("missing checkpoints (beyond recorded rounds): " + ", ".join(map(str, self.missing)))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "sweep", "round", "mean_accuracy", "spread", "seeds"])
        for lbl in self.labels:
            for cp in self.checkpoints:
                cell = self.cells[lbl][cp]
                if cell is None:
                    w.writerow([self.experiment, lbl, cp, "", "", 0])
                else:
                    w.writerow([self.experiment, lbl, cp, f"{cell[0]:.6f}", f"{cell[1]:.6f}", cell[2]])
        return buf.getvalue()


def summarize(path, checkpoints) -> SummaryTable:
    """Accuracy at each checkpoint per sweep value: seed mean and population std."""
    rows = read_metrics(path)
    experiment = rows[0]["experiment"] if rows else ""
    curves = accuracy_curves(rows)
    checkpoints = [int(c) for c in checkpoints]
    max_round = max((r for per in curves.values() for c in per.values() for r in c), default=0)
    cells: dict = defaultdict(dict)
    for label, per_seed in curves.items():
        for cp in checkpoints:
            vals = [c[cp] for c in per_seed.values() if cp in c]
            cells[label][cp] = (float(np.mean(vals)), float(np.std(vals)), len(vals)) if vals else None
    return SummaryTable(experiment, checkpoints, list(curves), dict(cells),
                        [cp for cp in checkpoints if cp > max_round])
