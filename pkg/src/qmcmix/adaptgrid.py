"""Coordinate-wise adaptive refinement of tensor hat surrogates.

Each coordinate interval of the current grid carries a boolean refinement
flag.  One pass bisects every flagged interval, evaluates the density only
at the newly created tensor grid points, and compares the trial interpolant
against the current one.  A bisection survives when the largest interpolant
change inside the interval's slab exceeds ``eps`` times the largest
coefficient; surviving children stay flagged, everything else reverts and is
never revisited.  The pass ends without extra density evaluations because
the kept grid is a sub-grid of the trial grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from qmcmix.hatbasis import (
    InvalidDensityError,
    TensorHatSurrogate,
    eval_density,
    surrogate_eval,
)

__all__ = ["AdaptiveState", "AdaptiveReport", "initial_state", "refine_once", "run_to_convergence"]


@dataclass(frozen=True)
class AdaptiveState:
    """Grid, per-interval flags and bookkeeping of one refinement stage."""

    surrogate: TensorHatSurrogate
    flags: tuple
    eps: float
    budget: int
    evaluations: int = 0
    iterations: int = 0
    budget_exceeded: bool = False

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("refinement threshold must be positive")
        for k, fl in zip(self.surrogate.knots, self.flags):
            if len(fl) != k.size - 1:
                raise ValueError("one flag per coordinate interval required")

    @property
    def knots(self):
        return self.surrogate.knots

    @property
    def done(self) -> bool:
        return self.budget_exceeded or not any(np.any(fl) for fl in self.flags)


@dataclass(frozen=True)
class AdaptiveReport:
    iterations: int
    evaluations: int
    knots_per_dim: tuple[int, ...]
    flags_history_length: int
    budget_exceeded: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "iterations": self.iterations,
                "evaluations": self.evaluations,
                "knots_per_dim": list(self.knots_per_dim),
                "flags_history_length": self.flags_history_length,
                "budget_exceeded": self.budget_exceeded,
            }
        )


def _checked_density(pi, pts: np.ndarray) -> np.ndarray:
    vals = eval_density(pi, pts)
    bad = ~np.isfinite(vals) | (vals < 0)
    if np.any(bad):
        where = pts[int(np.argmax(bad))]
        raise InvalidDensityError(f"density invalid at grid point {tuple(where)}")
    return vals


def initial_state(pi, box, resolution, eps: float, budget: int) -> AdaptiveState:
    """Uniform starting grid with every interval flagged for refinement."""
    b = np.asarray(box, dtype=float)
    m = np.atleast_1d(np.asarray(resolution, dtype=int))
    if m.size == 1:
        m = np.full(b.shape[0], m[0])
    knots = tuple(np.linspace(b[j, 0], b[j, 1], m[j] + 1) for j in range(b.shape[0]))
    size = int(np.prod([k.size for k in knots]))
    if budget < size:
        raise ValueError(f"budget {budget} below initial grid size {size}")
    grids = np.meshgrid(*knots, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    vals = _checked_density(pi, pts)
    surr = TensorHatSurrogate(knots=knots, coeffs=vals.reshape([k.size for k in knots]))
    flags = tuple(np.ones(k.size - 1, dtype=bool) for k in knots)
    return AdaptiveState(surrogate=surr, flags=flags, eps=eps, budget=budget, evaluations=size)


def refine_once(state: AdaptiveState, pi) -> AdaptiveState:
    """One bisect / evaluate / keep-or-revert pass.

    Exceeding the evaluation budget returns the state unchanged except for
    the ``budget_exceeded`` marker; nothing is evaluated in that case.
    """
    if not any(np.any(fl) for fl in state.flags):
        raise ValueError("no interval is flagged for refinement")
    s = state.surrogate.dim
    old_knots = state.knots

    trial_knots = []
    old_pos = []
    for y, fl in zip(old_knots, state.flags):
        mids = 0.5 * (y[:-1][fl] + y[1:][fl])
        trial = np.sort(np.concatenate([y, mids]))
        trial_knots.append(trial)
        old_pos.append(np.searchsorted(trial, y))
    trial_shape = tuple(t.size for t in trial_knots)

    new_mask = np.ones(trial_shape, dtype=bool)
    new_mask[np.ix_(*old_pos)] = False
    n_new = int(new_mask.sum())
    if state.evaluations + n_new > state.budget:
        return replace(state, budget_exceeded=True)

    grids = np.meshgrid(*trial_knots, indexing="ij")
    pts_new = np.stack([g[new_mask] for g in grids], axis=-1)
    trial_coeffs = np.empty(trial_shape)
    trial_coeffs[np.ix_(*old_pos)] = state.surrogate.coeffs
    trial_coeffs[new_mask] = _checked_density(pi, pts_new)

    pts_all = np.stack([g.ravel() for g in grids], axis=-1)
    current = surrogate_eval(state.surrogate, pts_all).reshape(trial_shape)
    diff = np.abs(trial_coeffs - current)
    threshold = state.eps * float(trial_coeffs.max())

    keep_positions = []
    new_flags = []
    for j in range(s):
        axes = tuple(i for i in range(s) if i != j)
        profile = diff.max(axis=axes) if axes else diff
        y = old_knots[j]
        fl = state.flags[j]
        pos = old_pos[j]
        keep = list(pos)
        flags_j = []
        for k in range(y.size - 1):
            if not fl[k]:
                flags_j.append(False)
                continue
            indicator = float(profile[pos[k] : pos[k + 1] + 1].max())
            if indicator > threshold:
                keep.append(pos[k] + 1)
                flags_j.extend([True, True])
            else:
                flags_j.append(False)
        keep_positions.append(np.sort(np.asarray(keep, dtype=int)))
        new_flags.append(np.asarray(flags_j, dtype=bool))

    new_coeffs = trial_coeffs[np.ix_(*keep_positions)]
    new_knots = tuple(trial_knots[j][keep_positions[j]] for j in range(s))
    surr = TensorHatSurrogate(knots=new_knots, coeffs=new_coeffs)
    return AdaptiveState(
        surrogate=surr,
        flags=tuple(new_flags),
        eps=state.eps,
        budget=state.budget,
        evaluations=state.evaluations + n_new,
        iterations=state.iterations + 1,
    )


def run_to_convergence(
    pi, box, resolution=2, eps: float = 5e-4, budget: int = 10**6
) -> tuple[TensorHatSurrogate, AdaptiveReport]:
    """Refine until every interval flag is false or the budget is hit.

    Returns the final surrogate and a report; a budget overrun is treated as
    converged-with-warning and marked in the report.
    """
    state = initial_state(pi, box, resolution, eps, budget)
    while not state.done:
        state = refine_once(state, pi)
    report = AdaptiveReport(
        iterations=state.iterations,
        evaluations=state.evaluations,
        knots_per_dim=tuple(k.size for k in state.knots),
        flags_history_length=state.iterations,
        budget_exceeded=state.budget_exceeded,
    )
    return state.surrogate, report
