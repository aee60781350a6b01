"""Built-in benchmark problems.

Two targets ship with the package: a strongly concentrated two-ridge
density on ``[-5, 5]^2`` paired with three rescaled Genz integrands, and a
four-parameter predator-prey posterior with risk and moment quantities of
interest at a fixed horizon.  Both expose vectorized callables: densities
and integrands take ``(n, s)`` arrays and return ``(n,)`` values.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CurvedRidgeDensity",
    "GenzIntegrand",
    "genz_suite",
    "TWOD_BOX",
    "PRIOR_LO",
    "PRIOR_HI",
    "X_TRUE",
    "OBS_TIMES",
    "NOISE_SIGMA",
    "DT_DEFAULT",
    "IntegrationBlowupError",
    "solve_ode",
    "terminal_state",
    "synth_data",
    "Dataset",
    "Posterior",
    "qoi",
    "QOI_NAMES",
]

TWOD_BOX = ((-5.0, 5.0), (-5.0, 5.0))


@dataclass(frozen=True)
class CurvedRidgeDensity:
    """Unnormalized density concentrating on two curved ridges.

    The exponent couples the coordinates through two quadratic "banana"
    terms; ``sigma`` scales their weight (smaller means sharper ridges).
    The default of 100 keeps the density O(1) at its peak with ridge widths
    that resolve on moderate grids.  Point-symmetric: the value at ``-x``
    equals the value at ``x``.  Zero is returned outside the box so the
    callable is a density on the box alone.
    """

    sigma: float = 100.0

    @property
    def box(self):
        return np.asarray(TWOD_BOX)

    def log_density(self, x):
        """Log of the density; ``-inf`` outside the box."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        x1, x2 = X[:, 0], X[:, 1]
        u = (2.0 / 3.0) * x1
        bracket = (
            (1.5 - u) ** 2
            + 50.0 * (-((u - 0.5) ** 2) + x2 - 0.5) ** 2
            + (1.5 + u) ** 2
            + 50.0 * (-((u + 0.5) ** 2) - x2 - 0.5) ** 2
        )
        out = -(x1**2 + x2**2) - (2.0 / self.sigma) * bracket
        inside = (np.abs(x1) <= 5.0) & (np.abs(x2) <= 5.0)
        out = np.where(inside, out, -np.inf)
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def __call__(self, x):
        out = np.exp(self.log_density(np.atleast_2d(np.asarray(x, dtype=float))))
        return float(out[0]) if np.asarray(x).ndim == 1 else out


@dataclass(frozen=True)
class GenzIntegrand:
    """Rescaled Genz test integrand on a box.

    ``kind`` selects the family: ``product_peak``, ``corner_peak`` or the
    non-differentiable ``c0``.  Coordinates are mapped affinely onto
    ``[0, 1]`` before applying the standard formulas with parameters ``c``
    and ``w``.
    """

    kind: str
    c: tuple
    w: tuple
    box: tuple = TWOD_BOX

    def __post_init__(self):
        if self.kind not in ("product_peak", "corner_peak", "c0"):
            raise ValueError(f"unknown integrand kind {self.kind!r}")
        if len(self.c) != len(self.box) or len(self.w) != len(self.box):
            raise ValueError("parameter vectors must match the box dimension")

    def __call__(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        b = np.asarray(self.box, dtype=float)
        u = (X - b[:, 0]) / (b[:, 1] - b[:, 0])
        c = np.asarray(self.c)
        w = np.asarray(self.w)
        if self.kind == "product_peak":
            vals = np.prod(1.0 / (1.0 / c**2 + (u + w) ** 2), axis=1)
        elif self.kind == "corner_peak":
            s = u.shape[1]
            vals = (1.0 + u @ c) ** (-(s + 1))
        else:
            vals = np.exp(-(np.abs(u - w) @ c))
        return float(vals[0]) if np.asarray(x).ndim == 1 else vals


def genz_suite(box=TWOD_BOX, c=(0.3, 0.6), w=(0.25, 0.7)) -> dict:
    """The three benchmark integrands keyed f1/f2/f3."""
    return {
        "f1": GenzIntegrand("product_peak", c, w, box),
        "f2": GenzIntegrand("corner_peak", c, w, box),
        "f3": GenzIntegrand("c0", c, w, box),
    }


# Predator-prey constants: known initial conditions and interaction rates,
# prior box for the four free parameters (rho_P, K, alpha, rho_Q).
P_INIT, Q_INIT, U_RATE, V_RATE = 50.0, 5.0, 1.2, 0.5
PRIOR_LO = np.array([0.36, 60.0, 15.0, 0.18])
PRIOR_HI = np.array([0.96, 160.0, 40.0, 0.48])
X_TRUE = np.array([0.6, 100.0, 25.0, 0.3])
N_OBS = 13
OBS_TIMES = tuple((i - 1) * 25.0 / 6.0 for i in range(1, N_OBS + 1))
NOISE_SIGMA = float(np.sqrt(2.0))
DT_DEFAULT = 25.0 / 600.0

TAU_P, TAU_Q, RISK_HORIZON = 25.0, 15.0, 120.0

_CHUNK_ROWS = 1 << 15  # keep the stepper's working set cache-resident


class IntegrationBlowupError(RuntimeError):
    """The ODE state left the finite range during integration."""


def _rhs(P, Q, rho_p, K, alpha, rho_q):
    inter = P * Q / (alpha + P)
    return rho_p * P * (1.0 - P / K) - U_RATE * inter, V_RATE * inter - rho_q * Q


def _rk4(params, t_end, dt, record_times, init):
    """Classic fourth-order stepper, vectorized over parameter rows.

    Returns recorded prey/predator states of shape ``(n, len(record_times))``
    and a boolean mask of rows that left the finite range (those rows hold
    NaN from the first bad step onwards).
    """
    X = np.atleast_2d(np.asarray(params, dtype=float))
    rho_p, K, alpha, rho_q = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    n_steps = int(round(t_end / dt))
    if not np.isclose(n_steps * dt, t_end, rtol=1e-9, atol=1e-12):
        raise ValueError("t_end must be an integer multiple of dt")
    record = {}
    for col, t in enumerate(record_times):
        k = int(round(t / dt))
        if not np.isclose(k * dt, t, rtol=1e-9, atol=1e-9):
            raise ValueError(f"record time {t} does not align with dt={dt}")
        record.setdefault(k, []).append(col)

    P = np.full(X.shape[0], float(init[0]))
    Q = np.full(X.shape[0], float(init[1]))
    P_rec = np.empty((X.shape[0], len(record_times)))
    Q_rec = np.empty((X.shape[0], len(record_times)))
    blown = np.zeros(X.shape[0], dtype=bool)

    def store(k):
        for col in record.get(k, ()):
            P_rec[:, col] = P
            Q_rec[:, col] = Q

    store(0)
    half = dt / 2.0
    for k in range(1, n_steps + 1):
        k1p, k1q = _rhs(P, Q, rho_p, K, alpha, rho_q)
        k2p, k2q = _rhs(P + half * k1p, Q + half * k1q, rho_p, K, alpha, rho_q)
        k3p, k3q = _rhs(P + half * k2p, Q + half * k2q, rho_p, K, alpha, rho_q)
        k4p, k4q = _rhs(P + dt * k3p, Q + dt * k3q, rho_p, K, alpha, rho_q)
        P = P + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        Q = Q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        bad = ~np.isfinite(P) | ~np.isfinite(Q) | (np.abs(P) > 1e12) | (np.abs(Q) > 1e12)
        if np.any(bad & ~blown):
            blown |= bad
            P = np.where(blown, np.nan, P)
            Q = np.where(blown, np.nan, Q)
        store(k)
    return P_rec, Q_rec, blown


def solve_ode(params, t_end, dt=DT_DEFAULT, record_times=None, init=(P_INIT, Q_INIT)):
    """Integrate the two-species system; returns recorded (P, Q) states.

    ``record_times`` must align with the step grid and defaults to the final
    time only.  ``params`` may be a single parameter vector or ``(n, 4)``
    rows.  A non-finite state raises :class:`IntegrationBlowupError`.
    """
    times = list(record_times) if record_times is not None else [t_end]
    P_rec, Q_rec, blown = _rk4(params, t_end, dt, times, init)
    if np.any(blown):
        raise IntegrationBlowupError(
            f"{int(blown.sum())} trajectories left the finite range before t={t_end}"
        )
    if np.asarray(params).ndim == 1:
        return P_rec[0], Q_rec[0]
    return P_rec, Q_rec


def terminal_state(params, dt=DT_DEFAULT, t_end=RISK_HORIZON, clip_to_prior=False):
    """Prey/predator populations at the horizon for parameter rows."""
    X = np.atleast_2d(np.asarray(params, dtype=float))
    if clip_to_prior:
        X = np.clip(X, PRIOR_LO, PRIOR_HI)
    P = np.empty(X.shape[0])
    Q = np.empty(X.shape[0])
    for i in range(0, X.shape[0], _CHUNK_ROWS):
        P_rec, Q_rec, blown = _rk4(X[i : i + _CHUNK_ROWS], t_end, dt, [t_end], (P_INIT, Q_INIT))
        if np.any(blown):
            raise IntegrationBlowupError("terminal state not finite")
        P[i : i + _CHUNK_ROWS] = P_rec[:, 0]
        Q[i : i + _CHUNK_ROWS] = Q_rec[:, 0]
    return P, Q


def _forward(params, dt):
    """Observation operator: populations at the 13 observation times,
    interleaved per time as (P, Q) pairs -> shape (n, 26)."""
    X = np.atleast_2d(np.asarray(params, dtype=float))
    G = np.empty((X.shape[0], 2 * len(OBS_TIMES)))
    blown = np.zeros(X.shape[0], dtype=bool)
    for i in range(0, X.shape[0], _CHUNK_ROWS):
        P_rec, Q_rec, bl = _rk4(
            X[i : i + _CHUNK_ROWS], OBS_TIMES[-1], dt, list(OBS_TIMES), (P_INIT, Q_INIT)
        )
        G[i : i + _CHUNK_ROWS, 0::2] = P_rec
        G[i : i + _CHUNK_ROWS, 1::2] = Q_rec
        blown[i : i + _CHUNK_ROWS] = bl
    return G, blown


def synth_data(x_true=X_TRUE, sigma=NOISE_SIGMA, seed=20260415, dt=DT_DEFAULT):
    """Noisy synthetic observations at the standard times (seeded)."""
    G, blown = _forward(np.atleast_2d(np.asarray(x_true, dtype=float)), dt)
    if np.any(blown):
        raise IntegrationBlowupError("true trajectory not finite")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=G.shape[1]) * sigma
    return G[0] + noise


@dataclass(frozen=True)
class Dataset:
    """Pinned synthetic observation set consumed by the harness."""

    y: np.ndarray
    sigma: float = NOISE_SIGMA
    seed: int = 20260415
    x_true: tuple = tuple(X_TRUE)
    times: tuple = OBS_TIMES
    dt: float = DT_DEFAULT

    @classmethod
    def generate(cls, seed: int = 20260415, sigma: float = NOISE_SIGMA, dt: float = DT_DEFAULT):
        y = synth_data(X_TRUE, sigma, seed, dt)
        return cls(y=y, sigma=sigma, seed=seed, dt=dt)

    def to_json(self) -> str:
        return json.dumps(
            {
                "t_i": list(self.times),
                "y": [float(v) for v in self.y],
                "sigma": self.sigma,
                "seed": self.seed,
                "x_true": list(self.x_true),
                "dt": self.dt,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str):
        doc = json.loads(text)
        return cls(
            y=np.asarray(doc["y"], dtype=float),
            sigma=float(doc["sigma"]),
            seed=int(doc["seed"]),
            x_true=tuple(doc["x_true"]),
            times=tuple(doc["t_i"]),
            dt=float(doc["dt"]),
        )


@dataclass(frozen=True)
class Posterior:
    """Unnormalized posterior density of the four rate parameters.

    Gaussian likelihood ``exp(-||G(x) - y||^2 / (2 sigma^2))`` with a uniform
    prior entering only as the box constraint: the value is zero outside the
    prior box.  Trajectories that blow up contribute zero density (warned).
    """

    dataset: Dataset
    dt: float = field(default=0.0)

    def __post_init__(self):
        if self.dt == 0.0:
            object.__setattr__(self, "dt", self.dataset.dt)

    @property
    def box(self):
        return np.stack([PRIOR_LO, PRIOR_HI], axis=1)

    def log_density(self, x):
        """Log likelihood ``-misfit / (2 sigma^2)``; ``-inf`` outside the box
        and for blown-up trajectories."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.all((X >= PRIOR_LO) & (X <= PRIOR_HI), axis=1)
        out = np.full(X.shape[0], -np.inf)
        if np.any(inside):
            G, blown = _forward(X[inside], self.dt)
            misfit = np.nansum((G - self.dataset.y) ** 2, axis=1)
            logd = -misfit / (2.0 * self.dataset.sigma**2)
            if np.any(blown):
                warnings.warn(
                    f"{int(blown.sum())} posterior evaluations hit an ODE blowup; "
                    "treated as zero density",
                    RuntimeWarning,
                    stacklevel=2,
                )
                logd = np.where(blown, -np.inf, logd)
            out[inside] = logd
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def __call__(self, x):
        out = np.exp(self.log_density(np.atleast_2d(np.asarray(x, dtype=float))))
        return float(out[0]) if np.asarray(x).ndim == 1 else out


QOI_NAMES = (
    "risk_P",
    "risk_Q",
    "moment_P_1",
    "moment_P_2",
    "moment_P_3",
    "moment_Q_1",
    "moment_Q_2",
    "moment_Q_3",
)


def qoi_from_state(name: str):
    """Map terminal (P, Q) states to the named quantity of interest."""
    if name == "risk_P":
        return lambda P, Q: (P <= TAU_P).astype(float)
    if name == "risk_Q":
        return lambda P, Q: (Q <= TAU_Q).astype(float)
    if name.startswith("moment_") and name[7] in "PQ" and name[9:].isdigit():
        r = int(name[9:])
        if name[7] == "P":
            return lambda P, Q: P**r
        return lambda P, Q: Q**r
    raise ValueError(f"unknown quantity of interest {name!r}")


def qoi(name: str, dt=DT_DEFAULT, clip_to_prior=False):
    """Quantity-of-interest integrand over parameter rows.

    ``clip_to_prior`` projects evaluation points onto the prior box first;
    useful when sample transforms overshoot the box by rounding.
    """
    func = qoi_from_state(name)

    def evaluate(x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        P, Q = terminal_state(X, dt=dt, clip_to_prior=clip_to_prior)
        vals = func(P, Q)
        return float(vals[0]) if np.asarray(x).ndim == 1 else vals

    return evaluate
