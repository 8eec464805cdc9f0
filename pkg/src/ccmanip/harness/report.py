"""Report persistence, paired comparison and export."""

from __future__ import annotations

import csv
import json
import math
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import TrialReport, read_csv


def save_reports(reports: Sequence[TrialReport], path):
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=1, sort_keys=True)


def load_reports(path) -> list[TrialReport]:
    with open(path) as fh:
        return [TrialReport.from_dict(d) for d in json.load(fh)]


def metric_value(report: TrialReport, metric: str) -> float:
    """Scalar metric by dotted name, e.g. ``rms_tracking_error`` or ``peak_impact_force.0``."""
    obj = report.to_dict()
    for part in metric.split("."):
        if isinstance(obj, dict):
            obj = obj[part]
        else:
            obj = obj[int(part)]
    return float(obj)


def compare(reports_a: Sequence[TrialReport], reports_b: Sequence[TrialReport], metric: str) -> dict:
    """Per-trial rows (a, b, b - a) and summary statistics of the deltas."""
    n = min(len(reports_a), len(reports_b))
    if len(reports_a) != len(reports_b):
        warnings.warn(f"trial counts differ ({len(reports_a)} vs {len(reports_b)}); comparing the first {n}")
    rows = []
    for a, b in zip(reports_a[:n], reports_b[:n]):
        va, vb = metric_value(a, metric), metric_value(b, metric)
        rows.append({"trial": a.trial, "a": va, "b": vb, "delta": vb - va})
    d = np.array([r["delta"] for r in rows]) if rows else np.zeros(0)
    summary = {"n": n, "mean_delta": float(d.mean()) if n else math.nan,
               "min_delta": float(d.min()) if n else math.nan, "max_delta": float(d.max()) if n else math.nan}
    return {"metric": metric, "rows": rows, "summary": summary}


def format_comparison(table: dict) -> str:
    lines = [f"metric: {table['metric']}", f"{'trial':>5} {'a':>14} {'b':>14} {'delta':>14}"]
    for r in table["rows"]:
        lines.append(f"{r['trial']:>5} {r['a']:>14.6g} {r['b']:>14.6g} {r['delta']:>14.6g}")
    s = table["summary"]
    lines.append(f"mean delta {s['mean_delta']:.6g} (min {s['min_delta']:.6g}, max {s['max_delta']:.6g}, n={s['n']})")
    return "\n".join(lines)


SERIES = ("time", "speed", "acceleration", "force", "lambda", "kp", "alpha")


def series(csv_text: str, dt: float) -> dict[str, np.ndarray]:
    """Plottable per-tick series: speed, acceleration and force magnitudes, lambda, mean kp, blend weight."""
    data = read_csv(csv_text)
    dim = 3 if "pz" in data else 2
    ax = "xyz"[:dim]
    v = np.stack([data[f"v{a}"] for a in ax], axis=1)
    f = np.stack([data[f"f{a}"] for a in ax], axis=1)
    acc = np.zeros(len(v))
    if len(v) > 1:
        acc[:-1] = np.linalg.norm(np.diff(v, axis=0), axis=1) / dt
        acc[-1] = acc[-2]
    kp = np.stack([data[f"kp_{a}"] for a in ax], axis=1).mean(axis=1)
    return {"time": data["time"], "speed": np.linalg.norm(v, axis=1), "acceleration": acc,
            "force": np.linalg.norm(f, axis=1), "lambda": data["lambda"], "kp": kp, "alpha": data["alpha"]}


def export(run_dir, fmt: str, out=None, dt: float = 0.002) -> list[Path]:
    """Export a run directory as ``csv`` (tick logs), ``json`` (metrics) or ``series``.

    Raises OSError when the destination cannot be written.
    """
    run_dir = Path(run_dir)
    out = Path(out) if out is not None else run_dir / "export"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        reports = load_reports(run_dir / "reports.json")
        dest = out / "summary.json"
        save_reports(reports, dest)
        written.append(dest)
    elif fmt == "csv":
        for src in sorted(run_dir.glob("trial_*.csv")):
            dest = out / src.name
            dest.write_text(src.read_text())
            written.append(dest)
    elif fmt == "series":
        for src in sorted(run_dir.glob("trial_*.csv")):
            s = series(src.read_text(), dt)
            dest = out / src.name.replace(".csv", "_series.csv")
            with open(dest, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(SERIES)
                for row in zip(*(s[k] for k in SERIES)):
                    w.writerow([repr(float(x)) for x in row])
            written.append(dest)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return written
