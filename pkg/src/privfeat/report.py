"""Results table rendering: csv, json and per-method plot series with bar charts."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .experiment import METRICS, ResultsTable

FORMATS = ("csv", "json", "plotdata")
METRIC_LABELS = {"wer": "WER", "eer": "EER", "mcc": "MCC", "der": "DER"}


def _ordered(values):
    return list(OrderedDict.fromkeys(values))


def plot_series(table: ResultsTable) -> dict:
    """One series per method per metric: x = condition, y = point with its interval.

    Several seeds are averaged (point and interval bounds alike); failed
    cells are skipped and counted in ``n_failed``.
    """
    ok = [r for r in table.rows if r.status == "ok"]
    conditions = _ordered(r.condition for r in table.rows)
    out: dict = {}
    for metric in _ordered(r.metric for r in table.rows):
        series = []
        for method in _ordered(r.method for r in table.rows if r.metric == metric):
            xs, ys, lo, hi, seeds = [], [], [], [], []
            for cond in conditions:
                cell = [r for r in ok if (r.method, r.condition, r.metric) == (method, cond, metric)]
                if not cell:
                    continue
                xs.append(cond)
                ys.append(float(np.mean([r.point for r in cell])))
                lo.append(float(np.mean([r.ci_low for r in cell])))
                hi.append(float(np.mean([r.ci_high for r in cell])))
                seeds.append(len(cell))
            n_failed = sum(
                1 for r in table.rows if (r.method, r.metric) == (method, metric) and r.status != "ok"
            )
            series.append(
                {"method": method, "x": xs, "y": ys, "ci_low": lo, "ci_high": hi, "n_seeds": seeds, "n_failed": n_failed}
            )
        out[metric] = {"conditions": conditions, "series": series}
    return out


def render_figures(plotdata: dict, out_dir) -> list[Path]:
    """Grouped bars (one group per condition, one bar per method) with interval whiskers."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric, block in plotdata.items():
        conds = block["conditions"]
        series = [s for s in block["series"] if s["x"]]
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(conds) + 2), 4.0))
        width = 0.8 / len(series)
        cmap = plt.get_cmap("tab20")
        for i, s in enumerate(series):
            pos = np.array([conds.index(c) for c in s["x"]], dtype=float) + (i - (len(series) - 1) / 2) * width
            y = np.asarray(s["y"])
            err = np.vstack([np.maximum(y - np.asarray(s["ci_low"]), 0), np.maximum(np.asarray(s["ci_high"]) - y, 0)])
            ax.bar(pos, y, width, label=s["method"], color=cmap(i % 20))
            ax.errorbar(pos, y, yerr=err, fmt="none", ecolor="black", elinewidth=0.8, capsize=0)
        ax.set_xticks(range(len(conds)))
        ax.set_xticklabels(conds)
        ax.set_ylabel(METRIC_LABELS.get(metric, metric))
        ax.legend(fontsize=7, ncol=2, frameon=False)
        ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def emit_report(table: ResultsTable, fmt: str, out_dir, figures: bool = True) -> list[Path]:
    """Write the table as ``fmt`` into ``out_dir``; plotdata also renders PNG figures.

    Returns the written paths. Raises OSError when the directory is unwritable.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out_dir / "results.csv"
        path.write_text(table.to_csv())
        return [path]
    if fmt == "json":
        path = out_dir / "results.json"
        path.write_text(table.to_json() + "\n")
        return [path]
    data = plot_series(table)
    path = out_dir / "plotdata.json"
    path.write_text(json.dumps(_jsonable(data), indent=1) + "\n")
    written = [path]
    if figures:
        written += render_figures(data, out_dir / "figures")
    return written


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def summary_lines(table: ResultsTable) -> list[str]:
    """Seed-averaged point per (method, metric, condition), tab-separated, for quick reading."""
    data = plot_series(table)
    lines = ["metric\tmethod\t" + "\t".join(next(iter(data.values()))["conditions"] if data else [])]
    for metric in [m for m in METRICS if m in data] + [m for m in data if m not in METRICS]:
        conds = data[metric]["conditions"]
        for s in data[metric]["series"]:
            vals = dict(zip(s["x"], s["y"]))
            lines.append(
                f"{metric}\t{s['method']}\t" + "\t".join(f"{vals[c]:.4f}" if c in vals else "nan" for c in conds)
            )
    return lines
