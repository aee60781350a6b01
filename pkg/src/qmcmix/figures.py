"""Matplotlib rendering of convergence reports.

Figures are a by-product of the ``converge`` report path; the CSV/JSON
files remain the machine-readable contract.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from qmcmix.report import InsufficientDataError, fit_slope

_MARKERS = ("o", "s", "^", "v", "D", "x", "+", "*")


def render_convergence(path, records, title=None):
    """Log-log error decay per quantity with fitted slope guide lines."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for i, rec in enumerate(records):
        n = np.asarray(rec.samples, dtype=float)
        e = np.asarray(rec.errors, dtype=float)
        pos = e > 0
        try:
            slope = fit_slope(rec)
            label = f"{rec.qoi} (slope {slope:.2f})"
        except InsufficientDataError:
            label = rec.qoi
        ax.loglog(n[pos], e[pos], marker=_MARKERS[i % len(_MARKERS)], label=label)
    positive = [max(r.errors) for r in records if any(e > 0 for e in r.errors)]
    if positive and len(records[0].samples) >= 2:
        n = np.asarray(records[0].samples, dtype=float)
        ax.loglog(n, max(positive) * (n / n[0]) ** -1.0, "k:", linewidth=0.8, label="slope -1")
    ax.set_xlabel("QMC samples N")
    ax.set_ylabel("absolute error")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_evaluations(path, records, title=None):
    """Density-evaluation cost per level, one line per quantity."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i, rec in enumerate(records):
        ax.loglog(
            rec.samples,
            np.maximum(rec.evaluations, 1),
            marker=_MARKERS[i % len(_MARKERS)],
            label=rec.qoi,
        )
    ax.set_xlabel("QMC samples N")
    ax.set_ylabel("density evaluations for the build")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
