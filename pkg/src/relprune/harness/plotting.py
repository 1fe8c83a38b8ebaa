"""Accuracy-vs-pruning-rate figures rendered straight to image files."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sweep import BASELINES, NA, SweepReport  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

METHOD_COLORS = {"lrp": "C0", "ig": "C1", "dlb": "C2", "magnitude": "0.35", "random": "0.6"}

# PNG metadata would otherwise embed the matplotlib version string
SAVE_KWARGS = dict(metadata={"Software": None}, bbox_inches="tight")


def _curves(report: SweepReport, key):
    curves: dict = {}
    for row in report.summary():
        curves.setdefault((row["method"], row["sampling"]), []).append(
            (row["rate"], row[f"{key}_mean"], row[f"{key}_std"]))
    return curves


def _plot(report: SweepReport, path, key, ylabel):
    curves = _curves(report, key)
    samplings = sorted({s for (_, s) in curves if s != NA}) or [NA]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(samplings), figsize=(3.2 * len(samplings), 2.8),
                                 sharey=True, squeeze=False)
        for ax, sampling in zip(axes[0], samplings):
            for (method, s), pts in sorted(curves.items()):
                if s != sampling and not (method in BASELINES and s == NA):
                    continue
                rate, mean, std = zip(*pts)
                style = "--" if method in BASELINES else "-"
                ax.plot(rate, mean, style, marker="o", ms=3, color=METHOD_COLORS.get(method),
                        label=method)
                if len(pts) > 1 and any(std):
                    lo = [m - e for m, e in zip(mean, std)]
                    hi = [m + e for m, e in zip(mean, std)]
                    ax.fill_between(rate, lo, hi, alpha=0.15, color=METHOD_COLORS.get(method))
            if key == "accuracy":
                ax.axhline(report.baseline_accuracy, color="k", lw=0.6, ls=":")
            ax.set_title(f"sampling: {sampling}")
            ax.set_xlabel("pruning rate")
            ax.grid(alpha=0.3, lw=0.5)
        axes[0][0].set_ylabel(ylabel)
        axes[0][-1].legend(loc="best")
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        fig.savefig(path, **SAVE_KWARGS)
        plt.close(fig)
    return path


def plot_accuracy_vs_rate(report: SweepReport, path):
    return _plot(report, path, "accuracy", "test accuracy")


def plot_drop_vs_rate(report: SweepReport, path):
    return _plot(report, path, "acc_drop", "accuracy drop")
