"""Gaussian-mixture partition of unity with per-component hat surrogates.

A fitted Gaussian mixture ``Psi = sum alpha_i psi_i`` splits a target
density ``pi`` into localized pieces ``pi * psi_i / Psi`` that sum back to
``pi`` exactly.  Each piece is pushed through the whitening map of its
component (eigenvector rotation around the mean), truncated to a centered
box of ``a`` local standard deviations, and approximated there by an
adaptive tensor hat surrogate.  The combined estimator then distributes
samples over components proportionally to their share of the total
surrogate mass and runs the mixture estimator inside each one.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from qmcmix.adaptgrid import run_to_convergence
from qmcmix.hatbasis import (
    InvalidDensityError,
    TensorHatSurrogate,
    surrogate_from_json,
    surrogate_to_json,
    to_mixture,
)
from qmcmix.lowdisc import DigitalSequence
from qmcmix.mixture import estimate, select_and_allocate

__all__ = [
    "FitError",
    "GaussianComponent",
    "PartitionEntry",
    "PartitionModel",
    "em_fit",
    "transform_to_local",
    "inverse_transform",
    "localized_target",
    "build_partition_model",
    "combined_estimate",
    "lattice_resample",
    "model_to_json",
    "model_from_json",
]

_EIG_FLOOR = 1e-12  # relative eigenvalue clamp for near-singular covariances


class FitError(RuntimeError):
    """Mixture fitting failed (singular covariance or persistent empty cluster)."""


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


@dataclass(frozen=True)
class GaussianComponent:
    """One mixture component with a cached eigendecomposition.

    ``U`` holds the eigenvectors of ``sigma`` as columns and ``lam`` the
    matching eigenvalues (clamped away from zero), so
    ``U @ diag(lam) @ U.T`` reconstructs the covariance.
    """

    alpha: float
    mu: np.ndarray
    sigma: np.ndarray
    U: np.ndarray
    lam: np.ndarray

    @classmethod
    def from_moments(cls, alpha: float, mu, sigma) -> "GaussianComponent":
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        sigma = 0.5 * (sigma + sigma.T)
        lam, U = np.linalg.eigh(sigma)
        if not np.all(np.isfinite(lam)):
            raise FitError("covariance eigendecomposition failed")
        lam = np.maximum(lam, _EIG_FLOOR * float(lam.max()))
        if lam.max() <= 0:
            raise FitError("covariance is not positive definite")
        return cls(alpha=float(alpha), mu=mu, sigma=sigma, U=U, lam=lam)

    @property
    def dim(self) -> int:
        return self.mu.size

    def log_pdf(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        Z = (X - self.mu) @ self.U
        quad = np.sum(Z**2 / self.lam, axis=1)
        return -0.5 * (self.dim * np.log(2.0 * np.pi) + np.sum(np.log(self.lam)) + quad)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.log_pdf(x))

    @property
    def peak(self) -> float:
        """Density value at the mean."""
        return float(np.exp(-0.5 * (self.dim * np.log(2.0 * np.pi) + np.sum(np.log(self.lam)))))


def transform_to_local(comp: GaussianComponent, x, rot=None) -> np.ndarray:
    """Whitening-free local coordinates ``z = R^T (x - mu)`` (an isometry)."""
    R = comp.U if rot is None else rot
    X = np.asarray(x, dtype=float)
    return (np.atleast_2d(X) - comp.mu) @ R if X.ndim > 1 else R.T @ (X - comp.mu)


def inverse_transform(comp: GaussianComponent, z, rot=None) -> np.ndarray:
    R = comp.U if rot is None else rot
    Z = np.asarray(z, dtype=float)
    return np.atleast_2d(Z) @ R.T + comp.mu if Z.ndim > 1 else R @ Z + comp.mu


def _kmeanspp_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(X.shape[0])]]
    for _ in range(1, k):
        d2 = np.min(
            np.stack([np.sum((X - c) ** 2, axis=1) for c in centers], axis=1), axis=1
        )
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(X.shape[0])])
            continue
        centers.append(X[rng.choice(X.shape[0], p=d2 / total)])
    return np.stack(centers)


def em_fit(samples, n_components: int, iterations: int = 100, seed: int = 0):
    """Expectation-maximization fit of a Gaussian mixture.

    Responsibility-weighted closed-form updates with a small diagonal jitter
    for stability; initial centers come from distance-squared (k-means++
    style) seeding of the given generator seed.  The log-likelihood must not
    decrease between iterations; an empty cluster is reseeded once before
    the fit is abandoned.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise ValueError("samples must be an (n, s) array")
    n, s = X.shape
    if n_components < 1 or n < n_components * (s + 1):
        raise ValueError("need at least (s + 1) samples per component")
    rng = np.random.default_rng(seed)

    centers = _kmeanspp_centers(X, n_components, rng)
    assign = np.argmin(
        np.stack([np.sum((X - c) ** 2, axis=1) for c in centers], axis=1), axis=1
    )
    resp = np.zeros((n, n_components))
    resp[np.arange(n), assign] = 1.0
    # guard against empty initial clusters
    resp += 1e-6
    resp /= resp.sum(axis=1, keepdims=True)

    comps = _m_step(X, resp)
    prev_ll = -np.inf
    reseeded = set()
    for _ in range(iterations):
        log_dens = np.stack(
            [np.log(c.alpha) + c.log_pdf(X) for c in comps], axis=1
        )
        log_norm = _logsumexp(log_dens, axis=1)
        ll = float(log_norm.sum())
        if ll + 1e-8 * (1.0 + abs(ll)) < prev_ll:
            raise FitError(f"log-likelihood decreased: {prev_ll} -> {ll}")
        resp = np.exp(log_dens - log_norm[:, None])
        weights = resp.sum(axis=0)
        empty = np.flatnonzero(weights < 1e-10)
        if empty.size:
            for i in empty:
                if i in reseeded:
                    raise FitError(f"component {i} emptied twice")
                reseeded.add(int(i))
                resp[:, i] = 0.0
                resp[int(np.argmin(log_norm)), i] = 1.0
            resp /= resp.sum(axis=1, keepdims=True)
            comps = _m_step(X, resp)
            prev_ll = -np.inf  # reseeding may lower the likelihood once
            continue
        comps = _m_step(X, resp)
        if abs(ll - prev_ll) <= 1e-12 * (1.0 + abs(ll)):
            break
        prev_ll = ll
    return comps


def _m_step(X: np.ndarray, resp: np.ndarray):
    n, s = X.shape
    weights = resp.sum(axis=0)
    comps = []
    for i in range(resp.shape[1]):
        w = resp[:, i]
        alpha = weights[i] / n
        mu = (w[:, None] * X).sum(axis=0) / weights[i]
        D = X - mu
        sigma = (w[:, None] * D).T @ D / weights[i]
        jitter = 1e-8 * (np.trace(sigma) / s if np.trace(sigma) > 0 else 1.0)
        sigma = sigma + jitter * np.eye(s)
        comps.append(GaussianComponent.from_moments(alpha, mu, sigma))
    return comps


def localized_target(pi, comps, i: int, rot=None):
    """The ``i``-th localized piece in its local coordinates.

    Returns ``z -> pi(x) * psi_i(x) / Psi(x)`` with ``x`` the pulled-back
    point; the partition ratio is evaluated in log space, so it stays finite
    wherever the mixture underflows (it never exceeds ``1 / alpha_i``).
    """
    comp = comps[i]
    R = comp.U if rot is None else rot
    log_alpha = np.log(np.array([c.alpha for c in comps]))

    def target(z):
        Z = np.atleast_2d(np.asarray(z, dtype=float))
        X = Z @ R.T + comp.mu
        logs = np.stack([c.log_pdf(X) for c in comps], axis=1)
        ratio = np.exp(logs[:, i] - _logsumexp(logs + log_alpha, axis=1))
        dens = np.asarray(pi(X), dtype=float)
        if not np.all(np.isfinite(dens)):
            raise InvalidDensityError("target density produced a non-finite value")
        vals = dens * ratio
        return float(vals[0]) if np.asarray(z).ndim == 1 else vals

    return target


@dataclass(frozen=True)
class PartitionEntry:
    """One component of a built partition model."""

    gaussian: GaussianComponent
    rot: np.ndarray
    half_widths: np.ndarray
    surrogate: TensorHatSurrogate
    evaluations: int

    @property
    def mass(self) -> float:
        return self.surrogate.mass


@dataclass(frozen=True)
class PartitionModel:
    """Per-component surrogates plus the combined mass ``c``.

    ``c = sum alpha_i * mass_i`` approximates the normalizing constant of the
    target; ``epsilon`` bounds every Gaussian outside its truncation box.
    """

    entries: tuple
    epsilon: float

    @property
    def c(self) -> float:
        return float(
            sum(e.gaussian.alpha * e.mass for e in self.entries)
        )

    @property
    def evaluations(self) -> int:
        return int(sum(e.evaluations for e in self.entries))


def build_partition_model(
    pi,
    comps,
    a: float = 5.0,
    eps_adapt: float = 5e-4,
    budget: int = 10**6,
    identity_rotation: bool = False,
    resolution=2,
) -> PartitionModel:
    """Adaptive surrogates of every localized piece on its truncated box.

    The box spans ``a`` local standard deviations per axis; the recorded
    ``epsilon`` is the exact supremum of any ``psi_i`` outside its box
    (attained at the nearest boundary point), ``peak_i * exp(-a^2/2)``.
    """
    if a <= 0:
        raise ValueError("tail multiplier must be positive")
    tail_factor = float(np.exp(-0.5 * a * a))
    if tail_factor > 1e-3:
        warnings.warn(
            f"tail multiplier a={a} leaves Gaussian mass near the boundary; "
            "truncation error may dominate",
            RuntimeWarning,
            stacklevel=2,
        )
    entries = []
    for i, comp in enumerate(comps):
        if identity_rotation:
            rot = np.eye(comp.dim)
            scale = np.sqrt(np.diag(comp.sigma))
        else:
            rot = comp.U
            scale = np.sqrt(comp.lam)
        half = a * scale
        box = np.stack([-half, half], axis=1)
        target = localized_target(pi, comps, i, rot)
        surr, report = run_to_convergence(
            target, box, resolution=resolution, eps=eps_adapt, budget=budget
        )
        entries.append(
            PartitionEntry(
                gaussian=comp,
                rot=rot,
                half_widths=half,
                surrogate=surr,
                evaluations=report.evaluations,
            )
        )
    epsilon = max(e.gaussian.peak * tail_factor for e in entries)
    return PartitionModel(entries=tuple(entries), epsilon=epsilon)


def _component_budgets(model: PartitionModel, N: int) -> np.ndarray:
    """Largest-remainder split of ``N`` proportional to ``alpha_i * c_i``."""
    from qmcmix.mixture import DegenerateMixtureError

    share = np.array([e.gaussian.alpha * e.mass for e in model.entries])
    if share.sum() <= 0:
        raise DegenerateMixtureError("every component surrogate has zero mass")
    share = share / share.sum()
    raw = N * share
    base = np.floor(raw).astype(int)
    rem = N - int(base.sum())
    if rem > 0:
        frac = raw - base
        order = np.lexsort((np.arange(frac.size), -frac))
        base[order[:rem]] += 1
    return base


def combined_estimate(
    model: PartitionModel,
    f,
    N: int,
    delta: float,
    seq: DigitalSequence,
    return_details: bool = False,
):
    """Partition-of-unity estimate of ``int f d(normalized target)``.

    Component ``i`` receives a sample budget proportional to its share
    ``alpha_i c_i / c`` (largest-remainder rounding), runs the mixture
    estimator on its own surrogate, and contributes with weight
    ``alpha_i c_i / c``.  Components whose budget is below two samples are
    skipped with a warning.  ``delta`` may be the string ``"remark"`` to
    apply the per-component threshold preset from
    :func:`qmcmix.mixture.delta_preset`.
    """
    if N < 2:
        raise ValueError("need N >= 2")
    budgets = _component_budgets(model, N)
    c = model.c
    total = None
    details = []
    for entry, n_i in zip(model.entries, budgets):
        if n_i < 2:
            warnings.warn(
                f"component with share {entry.gaussian.alpha * entry.mass / c:.3g} "
                f"received {n_i} < 2 samples and was skipped",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        components = to_mixture(entry.surrogate)
        weights = [cp.weight for cp in components]
        if delta == "remark":
            from qmcmix.mixture import delta_preset

            delta_i = min(delta_preset(weights, int(n_i)), n_i * (1 - 1e-12))
        else:
            delta_i = float(delta)
        alloc = select_and_allocate(weights, int(n_i), delta_i)
        rot, mu = entry.rot, entry.gaussian.mu

        def f_local(Z, rot=rot, mu=mu):
            return f(np.atleast_2d(Z) @ rot.T + mu)

        est = estimate(components, alloc, f_local, seq)
        contribution = entry.gaussian.alpha * entry.mass * np.asarray(est) / c
        total = contribution if total is None else total + contribution
        details.append(
            {
                "N_i": int(n_i),
                "r": alloc.r,
                "dropped_mass": alloc.dropped_mass,
                "mass": entry.mass,
            }
        )
    if total is None:
        raise ValueError("every component was skipped; increase N")
    result = float(total) if np.ndim(total) == 0 else total
    return (result, details) if return_details else result


def lattice_resample(pi, box, per_dim: int, count: int, seed: int, jitter: bool = True):
    """Importance-resampled training points from a coarse lattice.

    Evaluates ``pi`` on a uniform grid, resamples grid points with
    probability proportional to their value, and (optionally) spreads each
    draw uniformly over its grid cell.  Deterministic for a fixed seed.
    """
    b = np.asarray(box, dtype=float)
    s = b.shape[0]
    axes = [np.linspace(b[j, 0], b[j, 1], per_dim) for j in range(s)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    vals = np.asarray(pi(pts), dtype=float)
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise InvalidDensityError("density invalid on the resampling lattice")
    total = vals.sum()
    if total <= 0:
        raise InvalidDensityError("density vanishes on the resampling lattice")
    rng = np.random.default_rng(seed)
    idx = rng.choice(pts.shape[0], size=count, p=vals / total)
    samples = pts[idx]
    if jitter:
        h = (b[:, 1] - b[:, 0]) / (per_dim - 1)
        samples = samples + rng.uniform(-0.5, 0.5, size=samples.shape) * h
        samples = np.clip(samples, b[:, 0], b[:, 1])
    return samples


def zoom_resample(
    log_pi,
    box,
    per_dim: int,
    count: int,
    seed: int,
    rounds: int = 6,
    log_drop: float = 10.0,
):
    """Importance resampling from an iteratively zoomed lattice.

    Strongly concentrated densities are invisible to a single coarse grid,
    so each round restricts the box to the lattice points whose log density
    lies within ``log_drop`` of the round's maximum (padded by one spacing)
    and re-grids.  The final lattice is resampled proportionally to the
    density with uniform jitter inside its cells.  Deterministic for a
    fixed seed; needs only log-density evaluations, so underflow of the
    density itself is harmless.
    """
    b = np.asarray(box, dtype=float).copy()
    outer = b.copy()
    s = b.shape[0]
    pts = lv = None
    for _ in range(rounds):
        axes = [np.linspace(b[j, 0], b[j, 1], per_dim) for j in range(s)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        lv = np.asarray(log_pi(pts), dtype=float)
        if np.all(np.isneginf(lv)):
            raise InvalidDensityError("log density is -inf on the whole lattice")
        keep = lv >= lv.max() - log_drop
        sel = pts[keep]
        spacing = (b[:, 1] - b[:, 0]) / (per_dim - 1)
        lo = np.maximum(sel.min(axis=0) - spacing, outer[:, 0])
        hi = np.minimum(sel.max(axis=0) + spacing, outer[:, 1])
        shrink = np.prod((hi - lo) / (b[:, 1] - b[:, 0]))
        b = np.stack([lo, hi], axis=1)
        if shrink > 0.5:
            break
    rng = np.random.default_rng(seed)
    probs = np.exp(lv - lv.max())
    probs /= probs.sum()
    idx = rng.choice(pts.shape[0], size=count, p=probs)
    samples = pts[idx]
    spacing = (b[:, 1] - b[:, 0]) / (per_dim - 1)
    samples = samples + rng.uniform(-0.5, 0.5, size=samples.shape) * spacing
    return np.clip(samples, outer[:, 0], outer[:, 1])


def model_to_json(model: PartitionModel) -> str:
    doc = {
        "epsilon": model.epsilon,
        "c": model.c,
        "components": [
            {
                "alpha": e.gaussian.alpha,
                "mu": e.gaussian.mu.tolist(),
                "sigma": e.gaussian.sigma.tolist(),
                "U": e.gaussian.U.tolist(),
                "lambda": e.gaussian.lam.tolist(),
                "rot": e.rot.tolist(),
                "a_vec": e.half_widths.tolist(),
                "evaluations": e.evaluations,
                "surrogate": json.loads(surrogate_to_json(e.surrogate)),
            }
            for e in model.entries
        ],
    }
    return json.dumps(doc)


def model_from_json(text: str) -> PartitionModel:
    doc = json.loads(text)
    entries = []
    for item in doc["components"]:
        gauss = GaussianComponent(
            alpha=float(item["alpha"]),
            mu=np.asarray(item["mu"], dtype=float),
            sigma=np.asarray(item["sigma"], dtype=float),
            U=np.asarray(item["U"], dtype=float),
            lam=np.asarray(item["lambda"], dtype=float),
        )
        entries.append(
            PartitionEntry(
                gaussian=gauss,
                rot=np.asarray(item["rot"], dtype=float),
                half_widths=np.asarray(item["a_vec"], dtype=float),
                surrogate=surrogate_from_json(json.dumps(item["surrogate"])),
                evaluations=int(item["evaluations"]),
            )
        )
    return PartitionModel(entries=tuple(entries), epsilon=float(doc["epsilon"]))
