"""Sweep report files: raw CSV, provenance JSON, per-curve plot data and figures."""
from __future__ import annotations

import csv
import json
import os

from .sweep import SweepReport

CSV_COLUMNS = ("method", "sampling", "rate", "seed", "accuracy", "acc_drop", "masked_units")
PLOT_COLUMNS = ("rate", "accuracy_mean", "accuracy_std", "acc_drop_mean", "acc_drop_std", "n")


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_records_csv(report: SweepReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in report.records:
            w.writerow([r.method, r.sampling, _fmt(r.rate), r.seed, _fmt(r.accuracy),
                        _fmt(r.acc_drop), r.masked_unit_count])


def write_plot_data(report: SweepReport, directory) -> list:
    os.makedirs(directory, exist_ok=True)
    curves: dict = {}
    for row in report.summary():
        curves.setdefault((row["method"], row["sampling"]), []).append(row)
    paths = []
    for (method, sampling), rows in sorted(curves.items()):
        path = os.path.join(directory, f"{method}_{sampling.replace('/', '')}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_COLUMNS)
            for row in rows:
                w.writerow([_fmt(row[c]) for c in PLOT_COLUMNS])
        paths.append(path)
    return paths


def write_report(report: SweepReport, out_dir, figures: bool = True) -> dict:
    """Write ``sweep.csv``, ``sweep.json``, ``plot_data/*.csv`` and (optionally) PNG figures."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"csv": os.path.join(out_dir, "sweep.csv"),
             "json": os.path.join(out_dir, "sweep.json")}
    write_records_csv(report, paths["csv"])
    with open(paths["json"], "w") as fh:
        json.dump(report.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    paths["plot_data"] = write_plot_data(report, os.path.join(out_dir, "plot_data"))
    if figures and report.records:
        from .plotting import plot_accuracy_vs_rate, plot_drop_vs_rate

        fig_dir = os.path.join(out_dir, "figures")
        paths["figures"] = [plot_accuracy_vs_rate(report, os.path.join(fig_dir, "accuracy_vs_rate.png")),
                            plot_drop_vs_rate(report, os.path.join(fig_dir, "acc_drop_vs_rate.png"))]
    return paths


def read_report(path) -> SweepReport:
    with open(path) as fh:
        return SweepReport.from_json(json.load(fh))


def read_records_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
