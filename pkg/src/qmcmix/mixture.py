"""Sample allocation and estimation for weighted sums of product densities.

A mixture is a list of components, each a product of one-dimensional
densities with an attached non-negative weight.  Integration against the
normalized mixture proceeds in two steps: :func:`select_and_allocate` keeps
the heaviest components until they cover all but ``delta/N`` of the total
mass and splits ``N`` samples between them proportionally;
:func:`estimate` then transforms the same initial segment of a digital
sequence through each component's coordinate-wise inverse CDF and averages
the integrand.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from qmcmix.lowdisc import DigitalSequence, block

__all__ = [
    "Density1D",
    "uniform_density",
    "ProductComponent",
    "Allocation",
    "DegenerateMixtureError",
    "select_and_allocate",
    "estimate",
    "g_diagnostic",
]


class DegenerateMixtureError(ValueError):
    """All component weights vanish; no density can be formed."""


@dataclass(frozen=True)
class Density1D:
    """A one-dimensional density on ``[a, b]`` with evaluable transforms.

    ``pdf``, ``cdf`` and ``inv_cdf`` must accept scalars or numpy arrays.
    ``cdf(a) = 0``, ``cdf(b) = 1`` and ``inv_cdf`` must invert ``cdf`` on the
    support.
    """

    a: float
    b: float
    pdf: Callable
    cdf: Callable
    inv_cdf: Callable


def uniform_density(a: float, b: float) -> Density1D:
    """Uniform density on ``[a, b]``."""
    if not a < b:
        raise ValueError("need a < b")
    width = b - a
    return Density1D(
        a=a,
        b=b,
        pdf=lambda x: np.where((np.asarray(x) >= a) & (np.asarray(x) <= b), 1.0 / width, 0.0),
        cdf=lambda x: np.clip((np.asarray(x) - a) / width, 0.0, 1.0),
        inv_cdf=lambda z: a + np.asarray(z) * width,
    )


@dataclass(frozen=True)
class ProductComponent:
    """One mixture term: per-dimension densities and a non-negative weight."""

    factors: tuple
    weight: float

    def __post_init__(self):
        if self.weight < 0 or not np.isfinite(self.weight):
            raise ValueError("component weight must be finite and >= 0")

    @property
    def dim(self) -> int:
        return len(self.factors)


@dataclass(frozen=True)
class Allocation:
    """Result of the weight-ordered sample split.

    ``selected`` lists component indices by non-increasing weight (ties by
    original position); ``counts`` are the per-component sample numbers with
    ``sum(counts) == total``.  ``mass`` is the sum of all weights, selected
    or not.  Counts other than the last are ``floor(total * w / mass)`` and
    may round to zero for very light components.
    """

    selected: tuple[int, ...]
    counts: tuple[int, ...]
    total: int
    delta: float
    mass: float
    selected_mass: float = field(default=0.0)

    @property
    def r(self) -> int:
        return len(self.selected)

    @property
    def dropped_mass(self) -> float:
        """Weight fraction left out by the threshold rule."""
        return 1.0 - self.selected_mass


def select_and_allocate(weights, N: int, delta: float) -> Allocation:
    """Pick the heaviest components and split ``N`` samples between them.

    The selection keeps the smallest prefix of the weight-sorted components
    whose mass fraction reaches ``1 - delta/N``.  Each kept component except
    the last receives ``floor(N * w / mass)`` samples; the last absorbs the
    remainder so the counts sum to ``N`` exactly.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise DegenerateMixtureError("all mixture weights are zero")
    if N < 2:
        raise ValueError("need N >= 2")
    if not 0 < delta < N:
        raise ValueError(f"delta must lie in (0, {N})")

    order = np.argsort(-w, kind="stable")
    mass = float(w.sum())
    cum = np.cumsum(w[order]) / mass
    r = int(np.searchsorted(cum, 1.0 - delta / N, side="left")) + 1
    r = min(r, w.size)

    selected = order[:r]
    counts = np.floor(N * w[selected] / mass).astype(int)
    counts[-1] = N - int(counts[:-1].sum())
    return Allocation(
        selected=tuple(int(i) for i in selected),
        counts=tuple(int(n) for n in counts),
        total=N,
        delta=float(delta),
        mass=mass,
        selected_mass=float(cum[r - 1]),
    )


def delta_preset(weights, N: int) -> float:
    """Threshold choice ``3N / (3 + A N)`` with ``A`` the smallest positive
    weight fraction; balances dropped mass against the number of kept terms
    but can be large when ``A`` is tiny."""
    w = np.asarray(weights, dtype=float)
    pos = w[w > 0]
    if pos.size == 0:
        raise DegenerateMixtureError("all mixture weights are zero")
    A = float(pos.min() / w.sum())
    return 3.0 * N / (3.0 + A * N)


def _integrand_values(f, X: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` on the rows of ``X``, tolerating scalar-only callables.

    Returns an array of shape ``(n,)`` or ``(n, q)`` for vector-valued
    integrands.
    """
    n = X.shape[0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals = np.asarray(f(X), dtype=float)
        if vals.ndim in (1, 2) and vals.shape[0] == n:
            return vals
    except Exception:
        pass
    return np.asarray([f(x) for x in X], dtype=float)


def _all_hat_factors(components, selected) -> bool:
    from qmcmix.hatbasis import HatDensity1D

    return all(
        isinstance(fac, HatDensity1D)
        for idx in selected
        for fac in components[idx].factors
    )


def _transform_hats(components, selected, counts, points) -> tuple[np.ndarray, np.ndarray]:
    """Flat inverse-CDF transform for hat-only mixtures.

    Returns the stacked transformed samples of shape ``(sum counts, s)`` and
    the segment start offsets for per-component reductions.
    """
    from qmcmix.hatbasis import hat_inverse_cdf_params

    counts = np.asarray(counts)
    s = components[selected[0]].dim
    params = np.empty((len(selected), s, 3))
    for row, idx in enumerate(selected):
        for j, fac in enumerate(components[idx].factors):
            params[row, j] = (fac.lo, fac.peak, fac.hi)

    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    total = int(counts.sum())
    comp_id = np.repeat(np.arange(len(selected)), counts)
    row_in_comp = np.arange(total) - np.repeat(starts, counts)
    Z = points[row_in_comp]
    X = np.empty((total, s))
    for j in range(s):
        X[:, j] = hat_inverse_cdf_params(
            params[comp_id, j, 0], params[comp_id, j, 1], params[comp_id, j, 2], Z[:, j]
        )
    return X, starts


def estimate(
    components: Sequence[ProductComponent],
    alloc: Allocation,
    f,
    seq: DigitalSequence,
):
    """Weighted quasi-Monte Carlo estimate of ``int f d(normalized mixture)``.

    Every selected component consumes the *same* initial segment of the
    sequence: component ``k`` with ``N_k`` samples maps points
    ``y_0 .. y_{N_k - 1}`` through its coordinate-wise inverse CDF.  The
    result is ``(1/mass) * sum_k (w_k / N_k) * sum_n f(...)``.  Components
    whose count rounded to zero are dropped with a warning.  ``f`` may be
    vectorized over ``(n, s)`` arrays and may return ``(n, q)`` values, in
    which case a length-``q`` vector of estimates is returned.
    """
    if len(alloc.selected) == 0:
        raise ValueError("allocation selects no components")
    used = [(idx, n) for idx, n in zip(alloc.selected, alloc.counts) if n > 0]
    n_zero = len(alloc.selected) - len(used)
    if n_zero:
        zero_mass = (
            sum(components[i].weight for i, n in zip(alloc.selected, alloc.counts) if n == 0)
            / alloc.mass
        )
        warnings.warn(
            f"{n_zero} selected component(s) received zero samples "
            f"(mass fraction {zero_mass:.3g} dropped)",
            RuntimeWarning,
            stacklevel=2,
        )
    if not used:
        raise ValueError("no component received a positive sample count")

    sel = [idx for idx, _ in used]
    counts = np.asarray([n for _, n in used])
    points = block(seq, 0, int(counts.max()))

    if _all_hat_factors(components, sel):
        X, starts = _transform_hats(components, sel, counts, points)
        vals = _integrand_values(f, X)
        sums = np.add.reduceat(vals, starts, axis=0)
    else:
        partials = []
        for idx, n in used:
            comp = components[idx]
            Z = points[:n]
            X = np.empty_like(Z)
            for j, fac in enumerate(comp.factors):
                X[:, j] = fac.inv_cdf(Z[:, j])
            partials.append(_integrand_values(f, X).sum(axis=0))
        sums = np.asarray(partials)

    weights = np.asarray([components[i].weight for i in sel])
    scale = weights / counts
    if sums.ndim == 2:
        total = (scale[:, None] * sums).sum(axis=0)
    else:
        total = float((scale * sums).sum())
    return total / alloc.mass


def g_diagnostic(weights_gamma, q: float, box, N) -> float:
    """Closed-form product-weight growth factor used in error reporting.

    Computes ``(-1 + prod_j (1 + (gamma_j * 3 * (b_j - a_j) * log N)^q))^(1/q)``
    for per-dimension positive weights.  Purely diagnostic; never feeds back
    into the algorithms.
    """
    gamma = np.asarray(weights_gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("per-dimension weights must be positive")
    if q < 1:
        raise ValueError("need q >= 1")
    if N < 2:
        raise ValueError("need N >= 2")
    b = np.asarray(box, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] != gamma.size:
        raise ValueError("box must be an (s, 2) array matching the weights")
    widths = b[:, 1] - b[:, 0]
    if np.any(widths <= 0):
        raise ValueError("box must be non-degenerate")
    terms = (gamma * 3.0 * widths * np.log(N)) ** q
    return float((np.prod(1.0 + terms) - 1.0) ** (1.0 / q))
