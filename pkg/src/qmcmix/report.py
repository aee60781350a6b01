"""Convergence records, slope fits and delimited output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["InsufficientDataError", "ConvergenceRecord", "fit_slope", "write_csv", "write_summary"]


class InsufficientDataError(ValueError):
    """Fewer than three usable points for a slope fit."""


@dataclass
class ConvergenceRecord:
    """(N, |error|) pairs for one method/problem/quantity combination."""

    method: str
    problem: str
    qoi: str
    samples: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)
    estimates: list = field(default_factory=list)

    def append(self, n: int, error: float, evals: int, estimate: float) -> None:
        if self.samples and n <= self.samples[-1]:
            raise ValueError("sample sizes must increase")
        if error < 0:
            raise ValueError("errors are absolute values")
        self.samples.append(int(n))
        self.errors.append(float(error))
        self.evaluations.append(int(evals))
        self.estimates.append(float(estimate))

    def slope(self) -> float:
        return fit_slope(self)


def fit_slope(record: ConvergenceRecord) -> float:
    """Least-squares slope of log error against log sample count.

    Zero errors carry no information on a log scale and are excluded; fewer
    than three remaining points raise :class:`InsufficientDataError`.
    """
    n = np.asarray(record.samples, dtype=float)
    e = np.asarray(record.errors, dtype=float)
    usable = e > 0
    if usable.sum() < 3:
        raise InsufficientDataError(
            f"need >= 3 positive-error points, have {int(usable.sum())}"
        )
    x = np.log(n[usable])
    y = np.log(e[usable])
    xm, ym = x.mean(), y.mean()
    return float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())


def write_csv(path, records: list) -> None:
    """One row per level with columns N, error, evals, method, qoi.

    Floats are written with ``repr`` so identical runs produce identical
    bytes.
    """
    lines = ["N,error,evals,method,qoi"]
    for rec in records:
        for n, err, ev in zip(rec.samples, rec.errors, rec.evaluations):
            lines.append(f"{n},{err!r},{ev},{rec.method},{rec.qoi}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary(path, records: list, extras: dict | None = None) -> None:
    """JSON summary with per-record fitted slopes and run metadata."""
    doc = {"records": [], "extras": extras or {}}
    for rec in records:
        try:
            slope = fit_slope(rec)
        except InsufficientDataError:
            slope = None
        doc["records"].append(
            {
                "method": rec.method,
                "problem": rec.problem,
                "qoi": rec.qoi,
                "N": rec.samples,
                "error": rec.errors,
                "evals": rec.evaluations,
                "estimate": rec.estimates,
                "slope": slope,
            }
        )
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
