"""Figure rendering for metric reports.

Kept separate from metric computation: the evaluation module only emits data,
this module turns a report into PNG files next to the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluate import MetricReport

__all__ = ["render_report"]


def _curve(ax, pairs, label: str) -> None:
    xs = [x for x, _ in pairs]
    ys = [y for _, y in pairs]
    ax.plot(xs, ys, marker="o", markersize=3)
    ax.set_xlabel("retrieved samples")
    ax.set_ylabel(label)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)


def render_report(report: MetricReport, out_dir: str | Path, stem: str = "report") -> list[Path]:
    """Render the non-empty report sections; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if report.precision_at_k:
        fig, ax = plt.subplots(figsize=(5, 3.5), constrained_layout=True)
        _curve(ax, report.precision_at_k, "mean precision")
        ax.set_title(f"Precision vs. retrieved (MAP {report.map:.4f})")
        path = out / f"{stem}_precision.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if report.recall_at_k:
        fig, ax = plt.subplots(figsize=(5, 3.5), constrained_layout=True)
        _curve(ax, report.recall_at_k, "mean recall")
        ax.set_title("Recall vs. retrieved")
        path = out / f"{stem}_recall.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if report.precision_at_k and report.recall_at_k:
        fig, ax = plt.subplots(figsize=(4.5, 4), constrained_layout=True)
        rec = [y for _, y in report.recall_at_k]
        prec = [y for _, y in report.precision_at_k]
        ax.plot(rec, prec, marker="o", markersize=3)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
        ax.set_title("Precision-recall")
        path = out / f"{stem}_precision_recall.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if report.precision_at_radius:
        fig, ax = plt.subplots(figsize=(4, 3.5), constrained_layout=True)
        radii = [str(r) for r, _ in report.precision_at_radius]
        vals = [v for _, v in report.precision_at_radius]
        ax.bar(radii, vals, width=0.5)
        ax.set_xlabel("Hamming radius")
        ax.set_ylabel("mean lookup precision")
        ax.set_ylim(0, 1.02)
        ax.grid(True, axis="y", alpha=0.3)
        ax.set_title("Precision within radius")
        path = out / f"{stem}_radius.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
