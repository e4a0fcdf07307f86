"""Evaluation figures rendered to PNG alongside the text report.

Each helper takes an EvalReport and writes one chart; save_report_figures
bundles the lot into an output directory.  The Agg backend keeps rendering
headless and file-only.
"""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluate import EvalReport

_BAR_COLOR = "#4c72b0"
_FP_COLOR = "#c44e52"
_PNG_META = {"Software": "fusedet"}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_metrics_figure(path, report: EvalReport) -> None:
    names = ["precision", "recall", "f1"]
    values = [report.precision, report.recall, report.f1]
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.bar(names, values, color=_BAR_COLOR)
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=9)
    ax.set_ylim(0.0, 1.1)
    ax.set_title(f"Detection metrics (IoU >= {report.iou_thresh:g})")
    _finish(fig, path)


def save_provenance_figure(path, report: EvalReport) -> None:
    names = sorted(set(report.provenance_tp) | set(report.provenance_fp))
    tp = [report.provenance_tp.get(n, 0) for n in names]
    fp = [report.provenance_fp.get(n, 0) for n in names]
    x = range(len(names))
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.bar([i - 0.2 for i in x], tp, width=0.4, label="matched",
           color=_BAR_COLOR)
    ax.bar([i + 0.2 for i in x], fp, width=0.4, label="unmatched",
           color=_FP_COLOR)
    ax.set_xticks(list(x))
    ax.set_xticklabels(names)
    ax.set_ylabel("detections")
    ax.set_title("Detections by provenance")
    ax.legend()
    _finish(fig, path)


def save_lighting_figure(path, report: EvalReport) -> None:
    items = [(name, value) for name, value in report.lighting_recall.items()
             if value is not None]
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    if items:
        names = [name for name, _ in items]
        values = [value for _, value in items]
        ax.bar(names, values, color=_BAR_COLOR)
        for i, v in enumerate(values):
            ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=9)
        ax.set_ylim(0.0, 1.1)
    else:
        ax.text(0.5, 0.5, "no truth in any lighting bucket",
                ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("lighting level")
    ax.set_ylabel("recall")
    ax.set_title("Recall by lighting")
    _finish(fig, path)


def save_report_figures(out_dir, report: EvalReport, prefix="report") -> list:
    """Write the full set of report charts; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    writers = (("metrics", save_metrics_figure),
               ("provenance", save_provenance_figure),
               ("lighting", save_lighting_figure))
    paths = []
    for name, writer in writers:
        path = os.path.join(out_dir, f"{prefix}_{name}.png")
        writer(path, report)
        paths.append(path)
    return paths
