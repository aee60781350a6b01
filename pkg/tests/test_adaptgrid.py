import numpy as np
import pytest

from qmcmix import adaptgrid as ag
from qmcmix import hatbasis as hb
from qmcmix.problems import CurvedRidgeDensity


def test_linear_density_converges_in_one_pass():
    surr, rep = ag.run_to_convergence(lambda X: 1 + X[:, 0], [[0.0, 1.0]], 2, 1e-3, 1000)
    assert rep.iterations == 1
    assert rep.knots_per_dim == (3,)
    assert not rep.budget_exceeded
    np.testing.assert_array_equal(surr.knots[0], [0.0, 0.5, 1.0])


def test_kink_at_knot_needs_no_refinement():
    pi = lambda X: np.abs(X[:, 0] - 0.5)
    state = ag.initial_state(pi, [[0.0, 1.0]], 2, 1e-6, 1000)
    state = ag.refine_once(state, pi)
    np.testing.assert_array_equal(state.knots[0], [0.0, 0.5, 1.0])
    assert not state.flags[0].any()


def test_quadratic_inserts_midpoint_with_true_children():
    pi = lambda X: X[:, 0] ** 2
    state = ag.initial_state(pi, [[0.0, 1.0]], 1, 1e-3, 1000)
    state = ag.refine_once(state, pi)
    np.testing.assert_array_equal(state.knots[0], [0.0, 0.5, 1.0])
    assert state.flags[0].tolist() == [True, True]


def test_constant_density_one_iteration():
    surr, rep = ag.run_to_convergence(
        lambda X: np.ones(X.shape[0]), [[0.0, 2.0], [0.0, 3.0]], 2, 1e-4, 10_000
    )
    assert rep.iterations == 1
    assert rep.knots_per_dim == (3, 3)


def test_budget_below_initial_grid_rejected():
    with pytest.raises(ValueError, match="budget"):
        ag.initial_state(lambda X: np.ones(X.shape[0]), [[0.0, 1.0]], 4, 1e-3, 3)


def test_budget_exhaustion_marks_state():
    surr, rep = ag.run_to_convergence(lambda X: X[:, 0] ** 2, [[0.0, 1.0]], 2, 1e-9, 10)
    assert rep.budget_exceeded
    assert rep.evaluations <= 10


def test_grids_are_nested_and_deterministic():
    pi = lambda X: np.exp(-5 * (X[:, 0] - 0.3) ** 2)
    state = ag.initial_state(pi, [[0.0, 1.0]], 2, 1e-3, 10_000)
    prev = state.knots[0]
    while not state.done:
        state = ag.refine_once(state, pi)
        assert np.all(np.isin(prev, state.knots[0]))
        prev = state.knots[0]
    surr1, rep1 = ag.run_to_convergence(pi, [[0.0, 1.0]], 2, 1e-3, 10_000)
    surr2, rep2 = ag.run_to_convergence(pi, [[0.0, 1.0]], 2, 1e-3, 10_000)
    assert rep1 == rep2
    np.testing.assert_array_equal(surr1.knots[0], surr2.knots[0])
    np.testing.assert_array_equal(surr1.coeffs, surr2.coeffs)


def test_evaluation_accounting_no_point_twice():
    seen = []

    def pi(X):
        X = np.atleast_2d(X)
        seen.extend(map(tuple, X))
        return np.exp(-3 * ((X[:, 0] - 0.4) ** 2 + (X[:, 1] - 0.7) ** 2))

    surr, rep = ag.run_to_convergence(pi, [[0.0, 1.0], [0.0, 1.0]], 2, 1e-2, 10**5)
    assert len(seen) == rep.evaluations
    assert len(set(seen)) == len(seen)


def test_local_error_bound_on_cells():
    # quadratic with per-cell Lipschitz data: |pi - surrogate| <= L(k) diam(R_k)
    pi = lambda X: X[:, 0] ** 2
    surr, _ = ag.run_to_convergence(pi, [[0.0, 1.0]], 2, 1e-3, 10_000)
    knots = surr.knots[0]
    rng = np.random.default_rng(0)
    for k in range(knots.size - 1):
        lo, hi = knots[k], knots[k + 1]
        L = 2 * hi  # sup |pi'| on the cell
        diam = hi - lo
        xs = rng.uniform(lo, hi, 100)[:, None]
        err = np.abs(hb.surrogate_eval(surr, xs) - pi(xs))
        assert err.max() <= L * diam + 1e-12


def test_local_error_bound_2d():
    pi = lambda X: X[:, 0] ** 2 + X[:, 0] * X[:, 1]
    surr, _ = ag.run_to_convergence(pi, [[0.0, 1.0], [0.0, 1.0]], 2, 1e-2, 10**5)
    rng = np.random.default_rng(1)
    kx, ky = surr.knots
    for _ in range(50):
        i = rng.integers(0, kx.size - 1)
        j = rng.integers(0, ky.size - 1)
        cell = np.array([[kx[i], kx[i + 1]], [ky[j], ky[j + 1]]])
        # gradient components are monotone on the cell: corner maximum is a bound
        g1 = 2 * cell[0, 1] + cell[1, 1]
        g2 = cell[0, 1]
        L = np.hypot(g1, g2)
        diam = np.hypot(cell[0, 1] - cell[0, 0], cell[1, 1] - cell[1, 0])
        xs = np.column_stack(
            [rng.uniform(*cell[0], 60), rng.uniform(*cell[1], 60)]
        )
        err = np.abs(hb.surrogate_eval(surr, xs) - pi(xs))
        assert err.max() <= L * diam + 1e-12


def test_global_l1_bound():
    pi = lambda X: X[:, 0] ** 2
    surr, _ = ag.run_to_convergence(pi, [[0.0, 1.0]], 2, 1e-3, 10_000)
    xs = np.linspace(0, 1, 40001)[:, None]
    z = np.trapezoid(pi(xs), xs[:, 0])
    c = surr.mass
    l1 = np.trapezoid(np.abs(pi(xs) / z - hb.surrogate_eval(surr, xs) / c), xs[:, 0])
    knots = surr.knots[0]
    widths = np.diff(knots)
    local_L = 2 * knots[1:] / z
    bound = 2 * np.sum(widths * local_L * widths)
    assert l1 <= bound + 1e-12


def test_invalid_density_raises():
    with pytest.raises(hb.InvalidDensityError):
        ag.run_to_convergence(
            lambda X: np.where(X[:, 0] > 0.6, np.inf, 1.0), [[0.0, 1.0]], 2, 1e-3, 1000
        )


def test_ridge_density_evaluation_count_magnitude():
    pi = CurvedRidgeDensity()
    surr, rep = ag.run_to_convergence(pi, pi.box, 2, 5e-4, 10**6)
    assert 10**3 <= rep.evaluations <= 10**6
    assert not rep.budget_exceeded
