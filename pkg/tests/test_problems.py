import json
import math

import numpy as np
import pytest

from qmcmix import problems as pb


def test_ridge_density_origin_value():
    # hand evaluation of the exponent at the origin: bracket = 2*(3/2)^2 +
    # 2*50*(3/4)^2 = 60.75, so pi(0) = exp(-2*60.75/sigma)
    assert pb.CurvedRidgeDensity(sigma=1.0)(np.array([0.0, 0.0])) == pytest.approx(
        math.exp(-121.5), rel=1e-12
    )
    assert pb.CurvedRidgeDensity()(np.array([0.0, 0.0])) == pytest.approx(
        math.exp(-2.0 * 60.75 / 100.0), rel=1e-12
    )


def test_ridge_density_positive_on_axis():
    pi = pb.CurvedRidgeDensity()
    ys = np.linspace(-5, 5, 11)
    vals = pi(np.column_stack([np.zeros(11), ys]))
    assert np.all(vals > 0)


def test_ridge_density_point_symmetry():
    # the printed formula is symmetric under joint negation of both
    # coordinates (the two bracketed terms swap)
    pi = pb.CurvedRidgeDensity()
    rng = np.random.default_rng(4)
    X = rng.uniform(-5, 5, (200, 2))
    np.testing.assert_allclose(pi(X), pi(-X), rtol=1e-12)


def test_ridge_density_zero_outside_box():
    pi = pb.CurvedRidgeDensity()
    assert pi(np.array([5.1, 0.0])) == 0.0
    assert pi.log_density(np.array([0.0, -5.3])) == -np.inf


def test_genz_corner_peak_at_low_corner():
    g = pb.genz_suite()["f2"]
    assert g(np.array([-5.0, -5.0])) == 1.0


def test_genz_c0_peak_at_shift():
    g = pb.genz_suite()["f3"]
    x = np.array([10 * 0.25 - 5.0, 10 * 0.7 - 5.0])
    assert g(x) == pytest.approx(1.0, rel=1e-14)


def test_genz_product_peak_frozen_value():
    g = pb.genz_suite()["f1"]
    # by hand: (1/0.09 + 0.5^2)^-1 * (1/0.36 + 1.4^2)^-1
    expected = 1.0 / ((1 / 0.09 + 0.25) * (1 / 0.36 + 1.96))
    assert g(np.array([-2.5, 2.0])) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.0185782373, rel=1e-8)


def test_genz_bounds_and_monotonicity():
    suite = pb.genz_suite()
    rng = np.random.default_rng(9)
    X = rng.uniform(-5, 5, (500, 2))
    assert np.all(suite["f1"](X) <= 0.09 * 0.36 + 1e-15)
    assert np.all(suite["f3"](X) <= 1.0 + 1e-15)
    # corner peak decreases along each coordinate
    step = np.array([0.5, 0.0])
    assert np.all(suite["f2"](X + step * (X[:, :1] < 4.0)) <= suite["f2"](X) + 1e-12)
    f2 = suite["f2"]
    x = np.array([-1.0, 2.0])
    assert f2(x + np.array([0.5, 0.0])) < f2(x)
    assert f2(x + np.array([0.0, 0.5])) < f2(x)


def test_genz_unknown_kind():
    with pytest.raises(ValueError):
        pb.GenzIntegrand("oscillatory", (0.3, 0.6), (0.25, 0.7))


def test_logistic_limit_without_predators():
    x = np.array([0.6, 100.0, 25.0, 0.3])
    times = [5.0, 10.0, 25.0]
    P, Q = pb.solve_ode(x, 25.0, dt=1e-3, record_times=times, init=(50.0, 0.0))
    t = np.array(times)
    P_exact = 100 * 50 * np.exp(0.6 * t) / (100 + 50 * (np.exp(0.6 * t) - 1))
    np.testing.assert_allclose(P, P_exact, atol=1e-6)
    np.testing.assert_array_equal(Q, 0.0)


def test_exponential_decay_without_prey():
    x = np.array([0.6, 100.0, 25.0, 0.3])
    P, Q = pb.solve_ode(x, 25.0, dt=1e-3, record_times=[25.0], init=(0.0, 5.0))
    assert Q[0] == pytest.approx(5 * math.exp(-0.3 * 25), abs=1e-8)
    assert P[0] == 0.0


def test_step_halving_self_convergence():
    x = pb.X_TRUE
    t = 25.0 / 6.0
    P1, _ = pb.solve_ode(x, t, dt=pb.DT_DEFAULT, record_times=[t])
    P2, _ = pb.solve_ode(x, t, dt=pb.DT_DEFAULT / 2, record_times=[t])
    assert abs(P1[0] - P2[0]) / abs(P2[0]) < 1e-6


def test_fourth_order_convergence():
    x = pb.X_TRUE
    Pa, _ = pb.terminal_state(x, dt=25 / 600)
    Pb, _ = pb.terminal_state(x, dt=25 / 1200)
    Pc, _ = pb.terminal_state(x, dt=25 / 2400)
    order = np.log2(abs(Pa[0] - Pb[0]) / abs(Pb[0] - Pc[0]))
    assert order >= 3.5


def test_misaligned_record_time_rejected():
    with pytest.raises(ValueError, match="align"):
        pb.solve_ode(pb.X_TRUE, 0.9, dt=0.3, record_times=[0.5])


def test_blowup_raises():
    bad = np.array([0.6, -50.0, 25.0, 0.3])
    with pytest.raises(pb.IntegrationBlowupError):
        pb.solve_ode(bad, 120.0, dt=25 / 120, record_times=[120.0])


def test_synth_data_deterministic_and_noise_free_limit():
    y0 = pb.synth_data(sigma=0.0)
    G, _ = pb._forward(pb.X_TRUE, pb.DT_DEFAULT)
    np.testing.assert_array_equal(y0, G[0])
    ya = pb.synth_data(seed=123)
    yb = pb.synth_data(seed=123)
    np.testing.assert_array_equal(ya, yb)


def test_synth_data_noise_variance():
    G, _ = pb._forward(pb.X_TRUE, pb.DT_DEFAULT)
    draws = np.stack([pb.synth_data(seed=s) - G[0] for s in range(400)])
    assert np.var(draws) == pytest.approx(2.0, rel=0.05)


def test_posterior_exact_match_gives_one():
    ds = pb.Dataset(y=pb.synth_data(sigma=0.0), sigma=pb.NOISE_SIGMA, seed=0)
    post = pb.Posterior(ds)
    assert post(pb.X_TRUE) == pytest.approx(1.0, rel=1e-12)


def test_posterior_bounded_and_noise_identity():
    ds = pb.Dataset.generate(seed=77)
    post = pb.Posterior(ds)
    G, _ = pb._forward(pb.X_TRUE, ds.dt)
    eta = ds.y - G[0]
    expected = math.exp(-np.sum(eta**2) / (2 * ds.sigma**2))
    assert post(pb.X_TRUE) == pytest.approx(expected, rel=1e-12)
    rng = np.random.default_rng(8)
    X = rng.uniform(pb.PRIOR_LO, pb.PRIOR_HI, (100, 4))
    vals = post(X)
    assert np.all((vals >= 0) & (vals <= 1))


def test_posterior_zero_outside_prior_box():
    ds = pb.Dataset.generate(seed=77)
    post = pb.Posterior(ds)
    x = pb.PRIOR_HI + 0.1
    assert post(x) == 0.0


def test_posterior_finite_differences_bounded():
    ds = pb.Dataset.generate()
    post = pb.Posterior(ds, dt=25 / 300)
    rng = np.random.default_rng(15)
    X = pb.PRIOR_LO + (pb.PRIOR_HI - pb.PRIOR_LO) * rng.uniform(0.3, 0.7, (20, 4))
    h = 1e-4 * (pb.PRIOR_HI - pb.PRIOR_LO)
    for j in range(4):
        shifted = X.copy()
        shifted[:, j] += h[j]
        diff = (post(shifted) - post(X)) / h[j]
        assert np.all(np.isfinite(diff))


def test_qoi_state_functions():
    risk_p = pb.qoi_from_state("risk_P")
    assert risk_p(np.array([30.0]), np.array([0.0]))[0] == 0.0
    assert risk_p(np.array([25.0]), np.array([0.0]))[0] == 1.0
    mom2 = pb.qoi_from_state("moment_P_2")
    assert mom2(np.array([7.0]), np.array([0.0]))[0] == 49.0
    momq = pb.qoi_from_state("moment_Q_3")
    assert momq(np.array([0.0]), np.array([2.0]))[0] == 8.0
    with pytest.raises(ValueError):
        pb.qoi_from_state("moment_R_1")


def test_qoi_callable_clips_to_prior():
    f = pb.qoi("moment_P_1", dt=25 / 60, clip_to_prior=True)
    inside = f(pb.X_TRUE)
    nudged = f(np.concatenate([pb.X_TRUE[:1] + 100.0, pb.X_TRUE[1:]]))
    clipped = pb.X_TRUE.copy()
    clipped[0] = pb.PRIOR_HI[0]
    assert nudged == pytest.approx(f(clipped))
    assert inside > 0


def test_dataset_json_round_trip():
    ds = pb.Dataset.generate(seed=5)
    back = pb.Dataset.from_json(ds.to_json())
    np.testing.assert_array_equal(ds.y, back.y)
    assert back.sigma == ds.sigma and back.seed == ds.seed
    assert back.times == ds.times and back.x_true == ds.x_true
    doc = json.loads(ds.to_json())
    assert set(doc) == {"t_i", "y", "sigma", "seed", "x_true", "dt"}
