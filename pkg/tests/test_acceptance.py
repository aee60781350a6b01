"""Acceptance gate: one test per criterion, each printing a PASS line.

The heavy experiment fixtures (golden values, convergence sweeps) are shared
across criteria and their wall-clock time is charged to the criterion that
owns them.
"""

import json
import time

import numpy as np
import pytest

from qmcmix import cli, hatbasis as hb, lowdisc as ld, mixture as mx, pou
from qmcmix.lowdisc import default_sequence


def _announce(num, detail):
    print(f"\nACCEPTANCE {num} PASS: {detail}")


# --- 1: net property ------------------------------------------------------


def test_criterion_1_net_property():
    t0 = time.perf_counter()
    seq = default_sequence(2)
    for m in range(1, 9):
        assert ld.is_net(ld.block(seq, 0, 1 << m), m, 0), f"m={m}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _announce(1, f"2-D prefixes are (0,m,2)-nets for m=1..8 ({elapsed:.2f}s)")


# --- 2: allocation invariants --------------------------------------------


def test_criterion_2_allocation_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        n_comp = int(rng.integers(1, 25))
        w = rng.uniform(0.0, 1.0, n_comp) ** 2
        if not np.any(w > 0):
            w[0] = 0.5
        N = int(rng.integers(2, 10_000))
        delta = float(rng.uniform(1e-6, N * 0.999))
        alloc = mx.select_and_allocate(w, N, delta)
        counts = np.asarray(alloc.counts)
        assert counts.sum() == N
        frac = w[np.asarray(alloc.selected)] / alloc.mass
        gaps = np.abs(frac - counts / N)
        assert np.all(gaps[:-1] <= 1.0 / N + 1e-12)
        assert gaps.sum() <= (delta + 2 * (alloc.r - 1)) / N + 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    _announce(2, f"Diophantine allocation bounds on 10^4 instances ({elapsed:.2f}s)")


# --- 3: inverse-CDF round trip -------------------------------------------


def test_criterion_3_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 100_000
    # random (knots, index, z) triples reduced to hat support parameters;
    # kind 0 = interior hat, 1 = left boundary, 2 = right boundary
    lo = rng.uniform(-3.0, 3.0, n)
    g1 = rng.uniform(0.05, 2.0, n)
    g2 = rng.uniform(0.05, 2.0, n)
    kind = rng.integers(0, 3, n)
    peak = np.where(kind == 1, lo, lo + g1)
    hi = np.where(kind == 2, lo + g1, np.where(kind == 1, lo + g2, lo + g1 + g2))
    z = rng.uniform(0.0, 1.0, n)
    x = hb.hat_inverse_cdf_params(lo, peak, hi, z)
    back = hb.hat_cdf_params(lo, peak, hi, x)
    assert np.max(np.abs(back - z)) < 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    _announce(3, f"CDF/inverse round trip exact to 1e-12 on 10^5 triples ({elapsed:.2f}s)")


# --- 4: sup-norm interpolation bound --------------------------------------


def quad_product(centers, offset=0.3):
    def pi(X):
        X = np.atleast_2d(X)
        out = np.ones(X.shape[0])
        for j, c in enumerate(centers):
            out = out * (offset + (X[:, j] - c) ** 2)
        return out

    return pi


def quad_lipschitz(centers, offset=0.3):
    gmax = [offset + max(c, 1 - c) ** 2 for c in centers]
    dmax = [2 * max(c, 1 - c) for c in centers]
    return sum(
        dmax[j] * np.prod([gmax[i] for i in range(len(centers)) if i != j])
        for j in range(len(centers))
    )


def test_criterion_4_sup_norm_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    centers_by_dim = {1: (0.35,), 2: (0.35, 0.7), 3: (0.35, 0.7, 0.15)}
    for s, centers in centers_by_dim.items():
        pi = quad_product(centers)
        L = quad_lipschitz(centers)
        box = [[0.0, 1.0]] * s
        for m in (2, 4, 8, 16):
            surr = hb.build_uniform_surrogate(pi, box, m)
            probe = rng.uniform(0.0, 1.0, (100_000, s))
            err = np.abs(hb.surrogate_eval(surr, probe) - pi(probe))
            assert err.max() <= L * (1.0 / m) + 1e-12, (s, m)
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _announce(4, f"sup error <= L*h for s=1..3, m in 2..16 ({elapsed:.2f}s)")


# --- 5: product-form exactness --------------------------------------------


def test_criterion_5_product_rate():
    t0 = time.perf_counter()
    comp = mx.ProductComponent(
        factors=(mx.uniform_density(0.0, 1.0), mx.uniform_density(0.0, 1.0)), weight=1.0
    )
    seq = default_sequence(2)
    f = lambda X: X[:, 0] * X[:, 1]
    for p in range(8, 15):
        N = 1 << p
        alloc = mx.select_and_allocate([1.0], N, 0.5)
        est = mx.estimate([comp], alloc, f, seq)
        assert abs(est - 0.25) <= 2.0 * np.log(N) ** 2 / N, N
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _announce(5, f"|est - 1/4| <= 2 log(N)^2/N for N=2^8..2^14 ({elapsed:.2f}s)")


# --- 6 / 7 / 10: experiment harness ---------------------------------------


@pytest.fixture(scope="module")
def twod_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("twod")
    t0 = time.perf_counter()
    assert cli.main(["oracle", "--problem", "twod", "--out-dir", str(out)]) == 0
    summaries = {}
    for method in ("adaptive", "combined"):
        assert cli.main([
            "converge", "--problem", "twod", "--method", method, "--out-dir", str(out)
        ]) == 0
        summaries[method] = json.loads(
            (out / f"converge_twod_{method}.json").read_text()
        )
    return {"out": out, "summaries": summaries, "elapsed": time.perf_counter() - t0}


def test_criterion_6_twod_slopes(twod_runs):
    for method, bound in (("adaptive", -0.6), ("combined", -0.55)):
        for rec in twod_runs["summaries"][method]["records"]:
            assert rec["slope"] is not None, (method, rec["qoi"])
            assert rec["slope"] <= bound, (method, rec["qoi"], rec["slope"])
    assert twod_runs["elapsed"] < 300.0
    slopes = {
        m: {r["qoi"]: round(r["slope"], 2) for r in s["records"]}
        for m, s in twod_runs["summaries"].items()
    }
    _announce(6, f"two-dimensional slopes {slopes} ({twod_runs['elapsed']:.0f}s)")


@pytest.fixture(scope="module")
def predprey_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("predprey")
    t0 = time.perf_counter()
    assert cli.main(["oracle", "--problem", "predprey", "--out-dir", str(out)]) == 0
    assert cli.main([
        "converge", "--problem", "predprey", "--method", "combined",
        "--qoi", "moment_P_1,moment_Q_1,risk_P,risk_Q", "--out-dir", str(out)
    ]) == 0
    summary = json.loads((out / "converge_predprey_combined.json").read_text())
    return {"out": out, "summary": summary, "elapsed": time.perf_counter() - t0}


def test_criterion_7_predprey(predprey_runs):
    records = {r["qoi"]: r for r in predprey_runs["summary"]["records"]}
    for name in ("moment_P_1", "moment_Q_1"):
        assert records[name]["slope"] <= -0.7, (name, records[name]["slope"])
    for name in ("risk_P", "risk_Q"):
        errs = records[name]["error"]
        tail = errs[1:]
        assert all(tail[i] >= tail[i + 1] for i in range(len(tail) - 1)), (name, errs)
    assert predprey_runs["elapsed"] < 900.0
    detail = {
        "moment_P_1": round(records["moment_P_1"]["slope"], 2),
        "moment_Q_1": round(records["moment_Q_1"]["slope"], 2),
        "risk_P errors": ["%.2e" % e for e in records["risk_P"]["error"]],
    }
    _announce(7, f"predator-prey {detail} ({predprey_runs['elapsed']:.0f}s)")


# --- 8: partition-of-unity identities --------------------------------------


def test_criterion_8_partition_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    for s in (2, 4):
        alphas = rng.dirichlet(np.ones(4))
        comps = []
        for i in range(4):
            A = rng.normal(size=(s, s))
            comps.append(
                pou.GaussianComponent.from_moments(
                    alphas[i], rng.normal(size=s), A @ A.T + 0.2 * np.eye(s)
                )
            )
        X = rng.uniform(-3, 3, size=(100_000, s))
        log_alpha = np.log(alphas)
        logs = np.stack([c.log_pdf(X) for c in comps], axis=1)
        weighted = logs + log_alpha
        m = weighted.max(axis=1, keepdims=True)
        log_Psi = (m + np.log(np.exp(weighted - m).sum(axis=1, keepdims=True))).squeeze(1)
        total = np.zeros(X.shape[0])
        for i, c in enumerate(comps):
            ratio = np.exp(logs[:, i] - log_Psi)
            assert np.all(ratio <= 1.0 / c.alpha + 1e-9)
            total += c.alpha * ratio
        assert np.max(np.abs(total - 1.0)) < 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    _announce(8, f"sum(alpha psi)/Psi = 1 and psi/Psi <= 1/alpha at 10^5 points ({elapsed:.2f}s)")


# --- 9: EM sanity -----------------------------------------------------------


def test_criterion_9_em_sanity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    X = rng.normal([1.0, -2.0], [0.5, 2.0], size=(600, 2))
    (single,) = pou.em_fit(X, 1, seed=0)
    assert single.alpha == 1.0
    np.testing.assert_allclose(single.mu, X.mean(axis=0), atol=1e-12)
    ml_cov = (X - X.mean(0)).T @ (X - X.mean(0)) / len(X)
    np.testing.assert_allclose(single.sigma, ml_cov, atol=1e-6)

    A = rng.normal([-4.0, 0.0], 0.5, size=(500, 2))
    B = rng.normal([4.0, 1.0], 0.7, size=(500, 2))
    comps = pou.em_fit(np.vstack([A, B]), 2, seed=7)
    mus = sorted(c.mu[0] for c in comps)
    assert abs(mus[0] - A.mean(axis=0)[0]) < 0.05
    assert abs(mus[1] - B.mean(axis=0)[0]) < 0.05
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _announce(9, f"closed-form single fit and two-cluster recovery ({elapsed:.2f}s)")


# --- 10: determinism --------------------------------------------------------


def test_criterion_10_byte_determinism(twod_runs, tmp_path_factory):
    t0 = time.perf_counter()
    out2 = tmp_path_factory.mktemp("twod_repeat")
    (out2 / "golden_twod.json").write_bytes(
        (twod_runs["out"] / "golden_twod.json").read_bytes()
    )
    for method in ("adaptive", "combined"):
        assert cli.main([
            "converge", "--problem", "twod", "--method", method, "--out-dir", str(out2)
        ]) == 0
        for ext in (".csv", ".json"):
            a = (twod_runs["out"] / f"converge_twod_{method}{ext}").read_bytes()
            b = (out2 / f"converge_twod_{method}{ext}").read_bytes()
            assert a == b, (method, ext)
    elapsed = time.perf_counter() - t0
    assert elapsed < 2 * max(twod_runs["elapsed"], 1.0)
    _announce(10, f"repeat converge runs byte-identical ({elapsed:.0f}s)")
