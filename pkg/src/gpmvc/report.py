"""Aggregate per-run ``metrics.json`` files into mean/std tables and curves."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRICS = ("acc", "nmi", "purity")


@dataclass
class Cell:
    mode: str
    ratio: float
    values: dict[str, list[float]]

    @property
    def n(self) -> int:
        return len(self.values["acc"])

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values[metric]))

    def std(self, metric: str) -> float:
        # population std; a single run reports 0
        return float(np.std(self.values[metric], ddof=0))


def collect_metrics(runs_dir) -> list[dict]:
    root = Path(runs_dir)
    if not root.exists():
        raise FileNotFoundError(f"no such run directory: {root}")
    records = []
    for path in sorted(root.rglob("metrics.json")):
        rec = json.loads(path.read_text())
        rec["run_dir"] = str(path.parent)
        records.append(rec)
    return records


def aggregate(records) -> list[Cell]:
    groups: dict[tuple, dict[str, list[float]]] = defaultdict(lambda: {m: [] for m in METRICS})
    for rec in records:
        key = (str(rec.get("mode") or "ALL"), round(float(rec["ratio"]), 6))
        for m in METRICS:
            groups[key][m].append(float(rec[m]))
    return [Cell(mode, ratio, vals) for (mode, ratio), vals in sorted(groups.items())]


def summary_rows(cells) -> list[dict]:
    rows = []
    for c in cells:
        row = {"mode": c.mode, "ratio": c.ratio, "runs": c.n}
        for m in METRICS:
            row[f"{m}_mean"] = round(c.mean(m), 6)
            row[f"{m}_std"] = round(c.std(m), 6)
        rows.append(row)
    return rows


def summary_csv(cells) -> str:
    rows = summary_rows(cells)
    buf = io.StringIO()
    fields = ["mode", "ratio", "runs"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def metric_table(cells, metric: str = "acc", fmt: str = "md") -> str:
    """One row per mode, one column per ratio, cells ``mean±std``."""
    ratios = sorted({c.ratio for c in cells})
    modes = sorted({c.mode for c in cells}, key=_mode_order)
    lookup = {(c.mode, c.ratio): c for c in cells}
    header = ["method"] + [f"{r:g}" for r in ratios]
    body = []
    for mode in modes:
        row = [mode]
        for r in ratios:
            c = lookup.get((mode, r))
            row.append(f"{c.mean(metric):.4f}±{c.std(metric):.4f}" if c else "-")
        body.append(row)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return buf.getvalue()
    if fmt != "md":
        raise ValueError(f"unknown table format {fmt!r}")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines) + "\n"


def _mode_order(mode: str):
    order = {"baseline": 0, "AE": 1, "AE+AT": 2, "ALL": 3}
    return (order.get(mode, 9), mode)


def plot_curves(cells, metric: str, path) -> list[str]:
    """Plot metric vs. impartial ratio with one line per mode (error bars = std)
    and save it to ``path``. Returns the modes drawn, in legend order."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    modes = sorted({c.mode for c in cells}, key=_mode_order)
    for mode in modes:
        pts = sorted((c for c in cells if c.mode == mode), key=lambda c: c.ratio)
        ax.errorbar([c.ratio for c in pts], [c.mean(metric) for c in pts],
                    yerr=[c.std(metric) for c in pts], marker="o", capsize=3, label=mode)
    ax.set_xlabel("impartial ratio")
    ax.set_ylabel(metric.upper() if metric != "purity" else "Purity")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
    return modes
