"""Brute-force tensor-product quadrature references.

Used to produce "golden" integral values that the sequence-based estimators
are compared against.  The rules are deliberately simple (composite midpoint
or trapezoid on a box) with an error estimate from one resolution doubling:
:func:`tensor_quadrature` integrates at twice the requested resolution and
reports the difference to the requested resolution as the error estimate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from qmcmix.hatbasis import eval_density

__all__ = [
    "QuadratureSpec",
    "tensor_quadrature",
    "reference_expectation",
    "expectation_with_error",
    "save_goldens",
    "load_goldens",
]

_NODE_GUARD = 10**8


@dataclass(frozen=True)
class QuadratureSpec:
    """Box, per-dimension node counts and rule of a composite tensor rule."""

    box: tuple
    nodes: tuple
    rule: str = "trapezoid"

    def __post_init__(self):
        b = np.asarray(self.box, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 1] <= b[:, 0]):
            raise ValueError("box must be an (s, 2) array with a < b")
        n = np.asarray(self.nodes, dtype=int)
        if n.size != b.shape[0] or np.any(n < 2):
            raise ValueError("need one node count >= 2 per dimension")
        if self.rule not in ("midpoint", "trapezoid"):
            raise ValueError("rule must be 'midpoint' or 'trapezoid'")
        object.__setattr__(self, "box", tuple(map(tuple, b)))
        object.__setattr__(self, "nodes", tuple(int(v) for v in n))


def _nodes_weights(a: float, b: float, n: int, rule: str):
    if rule == "midpoint":
        h = (b - a) / n
        return a + (np.arange(n) + 0.5) * h, np.full(n, h)
    h = (b - a) / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return np.linspace(a, b, n), w


def _refined(n: int, rule: str) -> int:
    return 2 * n if rule == "midpoint" else 2 * n - 1


def _tensor_value(f, spec: QuadratureSpec, refined: bool) -> float:
    per_dim = []
    total = 1
    for (a, b), n in zip(spec.box, spec.nodes):
        nn = _refined(n, spec.rule) if refined else n
        per_dim.append(_nodes_weights(a, b, nn, spec.rule))
        total *= nn
    if total > _NODE_GUARD:
        raise ValueError(f"{total} nodes exceed the {_NODE_GUARD} evaluation guard")
    grids = np.meshgrid(*[nw[0] for nw in per_dim], indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=-1)
    vals = np.asarray(f(X), dtype=float)
    if vals.shape != (X.shape[0],):
        vals = eval_density(f, X)
    acc = vals.reshape([nw[0].size for nw in per_dim])
    for nw in per_dim:
        acc = np.tensordot(acc, nw[1], axes=([0], [0]))
    return float(acc)


def tensor_quadrature(f, spec: QuadratureSpec) -> tuple[float, float]:
    """Composite rule value and a resolution-doubling error estimate.

    The value is computed at twice the requested per-dimension resolution;
    the estimate is the absolute difference to the requested resolution.
    """
    fine = _tensor_value(f, spec, refined=True)
    coarse = _tensor_value(f, spec, refined=False)
    return fine, abs(fine - coarse)


def expectation_with_error(pi, f, box, resolution, rule: str = "trapezoid"):
    """``int f pi / int pi`` over the box, with a doubling error estimate.

    Both integrals share the same nodes, so the ratio is invariant under
    positive rescaling of ``pi``.
    """
    b = np.asarray(box, dtype=float)
    n = np.atleast_1d(np.asarray(resolution, dtype=int))
    if n.size == 1:
        n = np.full(b.shape[0], n[0])
    spec = QuadratureSpec(box=tuple(map(tuple, b)), nodes=tuple(int(v) for v in n), rule=rule)
    ratios = []
    for refined in (True, False):
        num = _tensor_value(lambda X: np.asarray(f(X)) * np.asarray(pi(X)), spec, refined)
        den = _tensor_value(pi, spec, refined)
        if den <= np.finfo(float).tiny * 1e4:
            raise ValueError("density integrates to (numerically) zero on the box")
        ratios.append(num / den)
    return ratios[0], abs(ratios[0] - ratios[1])


def reference_expectation(pi, f, box, resolution, rule: str = "trapezoid") -> float:
    """Ground-truth weighted expectation by tensor quadrature."""
    return expectation_with_error(pi, f, box, resolution, rule)[0]


def save_goldens(path, goldens: dict) -> None:
    """Write a name -> {value, error_estimate, spec} map as JSON."""
    with open(path, "w") as fh:
        json.dump(goldens, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_goldens(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
