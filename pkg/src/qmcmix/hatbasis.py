"""Piecewise-linear hat densities and tensor-product surrogates.

A knot vector ``y_0 < ... < y_K`` on ``[a, b]`` carries ``K + 1`` hat
functions: hat ``k`` is 1 at ``y_k``, 0 at its neighbouring knots and 0
outside them, with one-sided boundary hats at ``k = 0`` and ``k = K``.
Every hat, rescaled by ``2 / (support width)``, is a probability density
whose CDF is piecewise quadratic and whose inverse CDF is available in
closed form, so uniform samples map through hats exactly.

A :class:`TensorHatSurrogate` interpolates a non-negative function on a box
from its values at the tensor grid; rewriting the interpolant as a weighted
sum of normalized hat products turns it into a mixture that
``qmcmix.mixture`` can sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from qmcmix.mixture import DegenerateMixtureError, ProductComponent

__all__ = [
    "InvalidDensityError",
    "check_knots",
    "hat_eval",
    "HatDensity1D",
    "hat_density",
    "normalization_constants",
    "TensorHatSurrogate",
    "build_uniform_surrogate",
    "surrogate_eval",
    "to_mixture",
    "surrogate_to_json",
    "surrogate_from_json",
]


class InvalidDensityError(ValueError):
    """A density evaluation produced a negative or non-finite value."""


def check_knots(values) -> np.ndarray:
    """Validate and return a strictly increasing knot vector."""
    y = np.asarray(values, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("need at least two knots")
    if not np.all(np.isfinite(y)):
        raise ValueError("knots must be finite")
    if not np.all(np.diff(y) > 0):
        raise ValueError("knots must be strictly increasing")
    return y


def _hat_support(knots: np.ndarray, k: int) -> tuple[float, float, float]:
    """(left, peak, right) of hat ``k``; boundary hats repeat the peak."""
    K = knots.size - 1
    if not 0 <= k <= K:
        raise IndexError(f"hat index {k} outside 0..{K}")
    lo = knots[max(k - 1, 0)]
    hi = knots[min(k + 1, K)]
    return float(lo), float(knots[k]), float(hi)


def hat_eval(knots, k: int, x):
    """Value of the raw (peak-1) hat ``k`` at ``x``; 0 outside its support."""
    y = check_knots(knots)
    lo, peak, hi = _hat_support(y, k)
    xv = np.asarray(x, dtype=float)
    rise = peak - lo
    fall = hi - peak
    up = np.where(rise > 0, (xv - lo) / (rise if rise > 0 else 1.0), 1.0)
    down = np.where(fall > 0, (hi - xv) / (fall if fall > 0 else 1.0), 1.0)
    val = np.where(xv <= peak, up, down)
    val = np.where((xv < lo) | (xv > hi), 0.0, val)
    return float(val) if np.isscalar(x) else val


def hat_cdf_params(lo, peak, hi, x):
    """CDF of the normalized hat with support ``(lo, peak, hi)``; vectorized."""
    lo = np.asarray(lo, dtype=float)
    peak = np.asarray(peak, dtype=float)
    hi = np.asarray(hi, dtype=float)
    xv = np.asarray(x, dtype=float)
    rise = peak - lo
    fall = hi - peak
    span = hi - lo
    left = (xv <= peak) & (rise > 0)
    F = np.where(
        left,
        (xv - lo) ** 2 / np.where(rise > 0, rise * span, 1.0),
        1.0 - (hi - xv) ** 2 / np.where(fall > 0, fall * span, 1.0),
    )
    F = np.where(xv <= lo, 0.0, F)
    F = np.where(xv >= hi, 1.0, F)
    return F


def hat_inverse_cdf_params(lo, peak, hi, z):
    """Inverse CDF of the normalized hat; exact closed form, vectorized.

    The two quadratic branches meet at ``z* = (peak - lo) / (hi - lo)``;
    ``z == z*`` takes the left branch (both agree there).  Boundary hats are
    the degenerate cases ``lo == peak`` and ``peak == hi``.
    """
    lo = np.asarray(lo, dtype=float)
    peak = np.asarray(peak, dtype=float)
    hi = np.asarray(hi, dtype=float)
    zv = np.asarray(z, dtype=float)
    if np.any((zv < 0.0) | (zv > 1.0)):
        raise ValueError("inverse CDF argument must lie in [0, 1]")
    rise = peak - lo
    fall = hi - peak
    span = hi - lo
    zstar = rise / span
    x = np.where(
        zv <= zstar,
        lo + np.sqrt(zv * rise * span),
        hi - np.sqrt((1.0 - zv) * fall * span),
    )
    return x


class HatDensity1D:
    """One normalized hat, exposing the ``Density1D`` interface.

    The support is ``[lo, hi]`` where ``lo``/``hi`` are the neighbouring
    knots of the peak (or the peak itself for boundary hats); the density
    value at the peak is ``2 / (hi - lo)``.
    """

    __slots__ = ("lo", "peak", "hi")

    def __init__(self, lo: float, peak: float, hi: float):
        if not lo <= peak <= hi or lo == hi:
            raise ValueError("need lo <= peak <= hi with lo < hi")
        self.lo = float(lo)
        self.peak = float(peak)
        self.hi = float(hi)

    @property
    def a(self) -> float:
        return self.lo

    @property
    def b(self) -> float:
        return self.hi

    @property
    def norm(self) -> float:
        """Normalization constant: peak density value ``2 / (hi - lo)``."""
        return 2.0 / (self.hi - self.lo)

    def pdf(self, x):
        xv = np.asarray(x, dtype=float)
        rise = self.peak - self.lo
        fall = self.hi - self.peak
        up = (xv - self.lo) / (rise if rise > 0 else 1.0)
        down = (self.hi - xv) / (fall if fall > 0 else 1.0)
        val = np.where(xv <= self.peak, up if rise > 0 else 1.0, down)
        val = np.where((xv < self.lo) | (xv > self.hi), 0.0, val)
        out = self.norm * val
        return float(out) if np.isscalar(x) else out

    def cdf(self, x):
        out = hat_cdf_params(self.lo, self.peak, self.hi, x)
        return float(out) if np.isscalar(x) else out

    def inv_cdf(self, z):
        out = hat_inverse_cdf_params(self.lo, self.peak, self.hi, z)
        return float(out) if np.isscalar(z) else out

    def __repr__(self):
        return f"HatDensity1D(lo={self.lo!r}, peak={self.peak!r}, hi={self.hi!r})"


def hat_density(knots, k: int) -> HatDensity1D:
    """Normalized hat ``k`` of a knot vector."""
    y = check_knots(knots)
    return HatDensity1D(*_hat_support(y, k))


def normalization_constants(knots) -> np.ndarray:
    """Peak density values ``2 / (support width)`` for every hat of a vector."""
    y = check_knots(knots)
    K = y.size - 1
    lo = y[np.maximum(np.arange(K + 1) - 1, 0)]
    hi = y[np.minimum(np.arange(K + 1) + 1, K)]
    return 2.0 / (hi - lo)


def eval_density(pi, X: np.ndarray) -> np.ndarray:
    """Evaluate a density callable on rows of ``X`` (scalar fallback)."""
    n = X.shape[0]
    try:
        vals = np.asarray(pi(X), dtype=float)
        if vals.shape == (n,):
            return vals
    except Exception:
        pass
    return np.asarray([pi(x) for x in X], dtype=float)


@dataclass(frozen=True)
class TensorHatSurrogate:
    """Multilinear interpolant of a non-negative function on a box.

    ``knots[j]`` is the strictly increasing knot vector of dimension ``j``
    covering ``[box[j,0], box[j,1]]`` and ``coeffs`` holds the function
    values at the tensor grid (shape ``prod(K_j + 1)``).  ``weights`` are the
    mixture weights ``coeffs / prod_j norm_j`` and ``mass`` is their sum,
    which equals the integral of the interpolant.
    """

    knots: tuple
    coeffs: np.ndarray

    def __post_init__(self):
        knots = tuple(check_knots(k) for k in self.knots)
        object.__setattr__(self, "knots", knots)
        coeffs = np.asarray(self.coeffs, dtype=float)
        expected = tuple(k.size for k in knots)
        if coeffs.shape != expected:
            raise ValueError(f"coefficient shape {coeffs.shape} != grid shape {expected}")
        if not np.all(np.isfinite(coeffs)) or np.any(coeffs < 0):
            raise InvalidDensityError("coefficients must be finite and non-negative")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def dim(self) -> int:
        return len(self.knots)

    @property
    def box(self) -> np.ndarray:
        return np.array([[k[0], k[-1]] for k in self.knots])

    @cached_property
    def weights(self) -> np.ndarray:
        w = self.coeffs.copy()
        for j, k in enumerate(self.knots):
            shape = [1] * self.dim
            shape[j] = k.size
            w = w / normalization_constants(k).reshape(shape)
        return w

    @cached_property
    def mass(self) -> float:
        """Total mixture weight; equals the exact integral of the surrogate."""
        return float(self.weights.sum())


def build_uniform_surrogate(pi, box, m) -> TensorHatSurrogate:
    """Interpolate ``pi`` on an equally spaced tensor grid.

    ``m`` gives the per-dimension interval counts; the grid has
    ``prod(m_j + 1)`` points.  Negative or non-finite values of ``pi`` raise
    :class:`InvalidDensityError` naming the offending grid point.
    """
    b = np.asarray(box, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("box must be an (s, 2) array")
    m = np.atleast_1d(np.asarray(m, dtype=int))
    if m.size == 1:
        m = np.full(b.shape[0], m[0])
    if m.size != b.shape[0] or np.any(m < 1):
        raise ValueError("need one resolution >= 1 per dimension")
    knots = tuple(np.linspace(b[j, 0], b[j, 1], m[j] + 1) for j in range(b.shape[0]))
    return _surrogate_from_grid(pi, knots)


def _surrogate_from_grid(pi, knots: tuple) -> TensorHatSurrogate:
    grids = np.meshgrid(*knots, indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=-1)
    vals = eval_density(pi, X)
    bad = ~np.isfinite(vals) | (vals < 0)
    if np.any(bad):
        where = X[int(np.argmax(bad))]
        raise InvalidDensityError(f"density invalid at grid point {tuple(where)}")
    shape = tuple(k.size for k in knots)
    return TensorHatSurrogate(knots=knots, coeffs=vals.reshape(shape))


def surrogate_eval(surr: TensorHatSurrogate, x):
    """Interpolant value at ``x`` (a point or ``(n, s)`` rows).

    Only the ``2**s`` hats whose support contains ``x`` contribute.  The
    right box edge belongs to the last cell so the closed box is covered.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != surr.dim:
        raise ValueError("point dimension mismatch")
    box = surr.box
    if np.any(X < box[:, 0] - 0.0) or np.any(X > box[:, 1] + 0.0):
        raise ValueError("point outside the surrogate box")
    idx = []
    frac = []
    for j, k in enumerate(surr.knots):
        i = np.clip(np.searchsorted(k, X[:, j], side="right") - 1, 0, k.size - 2)
        idx.append(i)
        frac.append((X[:, j] - k[i]) / (k[i + 1] - k[i]))
    out = np.zeros(X.shape[0])
    for corner in product((0, 1), repeat=surr.dim):
        coeff = surr.coeffs[tuple(idx[j] + corner[j] for j in range(surr.dim))]
        w = np.ones(X.shape[0])
        for j, bit in enumerate(corner):
            w = w * (frac[j] if bit else 1.0 - frac[j])
        out += coeff * w
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def to_mixture(surr: TensorHatSurrogate) -> list[ProductComponent]:
    """Rewrite the surrogate as product-density mixture components.

    One component per grid point with positive coefficient; zero-weight
    entries are pruned.  The component weights sum to ``surr.mass``.
    """
    if surr.mass <= 0:
        raise DegenerateMixtureError("surrogate has zero mass")
    hats = [
        [hat_density(k, i) for i in range(k.size)]
        for k in surr.knots
    ]
    w_flat = surr.weights.ravel()
    components = []
    for flat in np.flatnonzero(w_flat > 0):
        multi = np.unravel_index(flat, surr.coeffs.shape)
        factors = tuple(hats[j][multi[j]] for j in range(surr.dim))
        components.append(ProductComponent(factors=factors, weight=float(w_flat[flat])))
    return components


def surrogate_to_json(surr: TensorHatSurrogate) -> str:
    """Serialize to JSON; doubles round-trip bit-exactly via shortest repr."""
    doc = {
        "box": [[float(k[0]), float(k[-1])] for k in surr.knots],
        "knots": [[float(v) for v in k] for k in surr.knots],
        "coeffs": [float(v) for v in surr.coeffs.ravel()],
        "mass": surr.mass,
    }
    return json.dumps(doc)


def surrogate_from_json(text: str) -> TensorHatSurrogate:
    doc = json.loads(text)
    knots = tuple(np.asarray(k, dtype=float) for k in doc["knots"])
    shape = tuple(k.size for k in knots)
    coeffs = np.asarray(doc["coeffs"], dtype=float).reshape(shape)
    return TensorHatSurrogate(knots=knots, coeffs=coeffs)
