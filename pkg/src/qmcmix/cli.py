"""Command-line experiment harness.

Subcommands
-----------
``dataset``    write the pinned synthetic observation set.
``oracle``     compute golden reference values (tensor quadrature for the
               two-dimensional problem, a large self-reference run for the
               predator-prey posterior).
``approx``     build one density approximation and serialize it.
``integrate``  run a single estimate and print a JSON report.
``converge``   run the full level sweep; writes CSV, a JSON summary and
               rendered figures.

Error metric: reported errors compare the self-normalized estimate
``A(f) / A(1)`` against the golden value, which keeps the metric meaningful
when light mixture components round to zero samples.  Exit codes: 0 success,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from qmcmix import adaptgrid, figures, oracle, pou, problems, report
from qmcmix.hatbasis import InvalidDensityError, surrogate_to_json, to_mixture
from qmcmix.lowdisc import default_sequence
from qmcmix.mixture import DegenerateMixtureError, estimate, g_diagnostic, select_and_allocate
from qmcmix.problems import IntegrationBlowupError
from qmcmix.report import ConvergenceRecord, InsufficientDataError

LEVEL_FACTOR = 4

PROFILES = {
    "twod": {
        # Desk budget caps the build size: past it the grids freeze while N
        # keeps growing, which keeps the mixture well fed with samples (the
        # frozen interpolation bias sits orders below the sampling error).
        "desk": {
            "eps0": 5e-3,
            "n0": 2**12,
            "levels": 4,
            "budget": 25_000,
            "resolution": 2,
        },
        "paper": {
            "eps0": 5e-4,
            "n0": 4 * 10**5,
            "levels": 4,
            "budget": 10**6,
            "resolution": 2,
        },
        "sigma": 100.0,
        "components": 4,
        "budget_combined": 6000,
        "lattice": 101,
        "resample": 4096,
        "em_iterations": 200,
        "golden_nodes": 1025,
        "qois": ("f1", "f2", "f3"),
    },
    "predprey": {
        # Sample ladder starts at 2^14: the four-dimensional builds need that
        # many samples before the sequence's decay regime is visible.
        "desk": {
            "eps0": 5e-3,
            "n0": 2**14,
            "levels": 4,
            "budget": 10**5,
            "resolution": 2,
            "dt_posterior": 25.0 / 300.0,
            "dt_qoi": 25.0 / 120.0,
        },
        "paper": {
            "eps0": 5e-6,
            "n0": 10**5,
            "levels": 4,
            "budget": 10**6,
            "resolution": 2,
            "dt_posterior": problems.DT_DEFAULT,
            "dt_qoi": problems.DT_DEFAULT,
        },
        "components": 1,
        "lattice": 9,
        "resample": 4096,
        "em_iterations": 100,
        "em_sampler": "zoom",
        "em_inflate": 1.6,
        "reference_n": 2**22,
        "qois": ("risk_P", "risk_Q", "moment_P_1", "moment_Q_1"),
    },
}

# ConfigError is caught first in main(), so the ValueError here only covers
# numerical-domain violations raised by the library modules.
_NUMERICAL_ERRORS = (
    DegenerateMixtureError,
    InvalidDensityError,
    IntegrationBlowupError,
    InsufficientDataError,
    pou.FitError,
    FloatingPointError,
    ValueError,
)


class ConfigError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmcmix", description="weighted quasi-Monte Carlo experiment harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    # defaults resolve in load_config so a config file can fill unset flags
    common.add_argument("--problem", choices=("twod", "predprey"), default=None)
    common.add_argument("--method", choices=("adaptive", "combined"), default=None)
    common.add_argument("--qoi", default=None, help="quantity name or 'all'")
    common.add_argument("--levels", type=int, default=None)
    common.add_argument("--delta", default=None, help="threshold in (0, N) or 'remark'")
    common.add_argument("--tail-mult", type=float, default=None)
    common.add_argument("--identity-rotation", action="store_true", default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--paper-scale", action="store_true", default=None)
    common.add_argument("--out-dir", default=None)
    common.add_argument("--sigma", type=float, default=None, help="two-ridge density scale")
    common.add_argument("--config", default=None, help="JSON file mirroring the flags")

    sub.add_parser("dataset", parents=[common])
    sub.add_parser("oracle", parents=[common])
    p_approx = sub.add_parser("approx", parents=[common])
    p_approx.add_argument("--level", type=int, default=0)
    p_int = sub.add_parser("integrate", parents=[common])
    p_int.add_argument("--level", type=int, default=0)
    p_int.add_argument("--n", type=int, default=None)
    sub.add_parser("converge", parents=[common])
    return parser


_FLAG_DEFAULTS = {
    "problem": "twod",
    "method": "adaptive",
    "qoi": "all",
    "tail_mult": 5.0,
    "identity_rotation": False,
    "seed": 2024,
    "paper_scale": False,
    "out_dir": "runs",
    "delta": 0.5,
}


def load_config(args: argparse.Namespace) -> dict:
    """Resolve flags > config file > problem profile > global defaults."""
    cfg = dict(vars(args))
    if args.config:
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in overrides.items():
            key = key.replace("-", "_")
            if cfg.get(key) is None:
                cfg[key] = value
    for key, value in _FLAG_DEFAULTS.items():
        if cfg.get(key) is None:
            cfg[key] = value
    profile = PROFILES.get(cfg["problem"])
    if profile is None:
        raise ConfigError(f"unknown problem {cfg['problem']!r}")
    scale = profile["paper" if cfg.get("paper_scale") else "desk"]
    for key, value in {**profile, **scale}.items():
        if key in ("desk", "paper"):
            continue
        if cfg.get(key) is None:
            cfg[key] = value
    if cfg.get("sigma") is None:
        cfg["sigma"] = profile.get("sigma", 1.0)
    return cfg


def resolve_qois(cfg) -> list:
    allq = list(PROFILES[cfg["problem"]]["qois"])
    if cfg["qoi"] in ("all", None):
        return allq
    names = [q.strip() for q in str(cfg["qoi"]).split(",") if q.strip()]
    valid = allq if cfg["problem"] == "twod" else list(problems.QOI_NAMES)
    for name in names:
        if name not in valid:
            raise ConfigError(f"unknown quantity {name!r} for problem {cfg['problem']}")
    return names


def level_schedule(cfg) -> list:
    return [
        (cfg["eps0"] * LEVEL_FACTOR**-k, cfg["n0"] * LEVEL_FACTOR**k)
        for k in range(cfg["levels"])
    ]


def _delta_value(cfg, weights, N) -> float:
    if isinstance(cfg["delta"], str):
        if cfg["delta"] != "remark":
            raise ConfigError("delta must be a number or 'remark'")
        from qmcmix.mixture import delta_preset

        return min(delta_preset(weights, N), N * (1 - 1e-12))
    value = float(cfg["delta"])
    if not 0 < value < N:
        raise ConfigError(f"delta {value} outside (0, {N})")
    return value


# --- problem setup -------------------------------------------------------


def ensure_dataset(cfg) -> problems.Dataset:
    path = Path(cfg["out_dir"]) / "dataset.json"
    if path.exists():
        return problems.Dataset.from_json(path.read_text())
    ds = problems.Dataset.generate(seed=int(cfg.get("dataset_seed", 20260415)))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ds.to_json() + "\n")
    return ds


def setup_problem(cfg) -> dict:
    if cfg["problem"] == "twod":
        pi = problems.CurvedRidgeDensity(sigma=float(cfg["sigma"]))
        integrands = problems.genz_suite()
        return {
            "pi": pi,
            "box": pi.box,
            "dim": 2,
            "integrand": lambda name: integrands[name],
            "golden_name": lambda name: f"twod/{name}",
        }
    dataset = ensure_dataset(cfg)
    posterior = problems.Posterior(dataset, dt=float(cfg["dt_posterior"]))
    dt_qoi = float(cfg["dt_qoi"])
    return {
        "pi": posterior,
        "box": posterior.box,
        "dim": 4,
        "integrand": lambda name: problems.qoi(name, dt=dt_qoi, clip_to_prior=True),
        "golden_name": lambda name: f"predprey/{name}",
        "dataset": dataset,
        "dt_qoi": dt_qoi,
    }


def _multi_integrand(cfg, setup, qois):
    """Stack the requested quantities plus a trailing constant column."""
    if cfg["problem"] == "twod":
        funcs = [setup["integrand"](name) for name in qois]

        def f(X):
            X = np.atleast_2d(X)
            cols = [fn(X) for fn in funcs] + [np.ones(X.shape[0])]
            return np.column_stack(cols)

        return f

    state_funcs = [problems.qoi_from_state(name) for name in qois]
    dt = setup["dt_qoi"]

    def f(X):
        X = np.atleast_2d(X)
        P, Q = problems.terminal_state(X, dt=dt, clip_to_prior=True)
        cols = [fn(P, Q) for fn in state_funcs] + [np.ones(X.shape[0])]
        return np.column_stack(cols)

    return f


# --- builds --------------------------------------------------------------


def build_adaptive(cfg, setup, eps):
    surr, rep = adaptgrid.run_to_convergence(
        setup["pi"],
        setup["box"],
        resolution=cfg["resolution"],
        eps=eps,
        budget=int(cfg["budget"]),
    )
    return surr, rep


def fit_mixture(cfg, setup):
    if cfg.get("em_sampler") == "zoom":
        samples = pou.zoom_resample(
            setup["pi"].log_density,
            setup["box"],
            per_dim=int(cfg["lattice"]),
            count=int(cfg["resample"]),
            seed=int(cfg["seed"]),
        )
    else:
        samples = pou.lattice_resample(
            setup["pi"],
            setup["box"],
            per_dim=int(cfg["lattice"]),
            count=int(cfg["resample"]),
            seed=int(cfg["seed"]),
        )
    comps = pou.em_fit(
        samples,
        int(cfg["components"]),
        iterations=int(cfg["em_iterations"]),
        seed=int(cfg["seed"]),
    )
    inflate = float(cfg.get("em_inflate", 1.0))
    if inflate != 1.0:
        comps = [
            pou.GaussianComponent.from_moments(c.alpha, c.mu, c.sigma * inflate**2)
            for c in comps
        ]
    return comps


def build_combined(cfg, setup, eps, comps):
    return pou.build_partition_model(
        setup["pi"],
        comps,
        a=float(cfg["tail_mult"]),
        eps_adapt=eps,
        budget=int(cfg.get("budget_combined") or cfg["budget"]),
        identity_rotation=bool(cfg["identity_rotation"]),
        resolution=cfg["resolution"],
    )


# --- estimates -----------------------------------------------------------


def normalized_estimates(cfg, build_kind, built, f_multi, n_qois, N):
    """Raw estimates, unit-mass estimate and their ratio for one level."""
    seq = default_sequence(built_dim(built, build_kind))
    if build_kind == "adaptive":
        components = to_mixture(built)
        weights = [c.weight for c in components]
        delta = _delta_value(cfg, weights, N)
        alloc = select_and_allocate(weights, N, delta)
        raw = np.atleast_1d(estimate(components, alloc, f_multi, seq))
        counts = list(alloc.counts)
        details = {
            "r": alloc.r,
            "delta": delta,
            "dropped_mass": alloc.dropped_mass,
            "mass": alloc.mass,
            "counts": counts[:1000],
            "counts_truncated": len(counts) > 1000,
            "zero_count_components": int(sum(1 for n in counts if n == 0)),
        }
    else:
        delta = cfg["delta"]
        if isinstance(delta, str) and delta != "remark":
            raise ConfigError("delta must be a number or 'remark'")
        if not isinstance(delta, str) and not 0 < float(delta) < N:
            raise ConfigError(f"delta {delta} outside (0, {N})")
        raw, per_comp = pou.combined_estimate(
            built, f_multi, N, delta, seq, return_details=True
        )
        raw = np.atleast_1d(raw)
        details = {"delta": delta, "components": per_comp, "mass": built.c}
    ones = float(raw[-1])
    if ones <= 0:
        raise DegenerateMixtureError("unit integrand estimate vanished")
    values = raw[:n_qois]
    return values, ones, values / ones, details


def built_dim(built, kind) -> int:
    if kind == "adaptive":
        return built.dim
    return built.entries[0].gaussian.dim


# --- subcommands ---------------------------------------------------------


def cmd_dataset(cfg) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = ensure_dataset(cfg)
    print((out / "dataset.json").resolve())
    print(f"seed={ds.seed} sigma={ds.sigma} n_obs={len(ds.times)}")
    return 0


def _golden_path(cfg) -> Path:
    return Path(cfg["out_dir"]) / f"golden_{cfg['problem']}.json"


def cmd_oracle(cfg) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    setup = setup_problem(cfg)
    goldens = {}
    if cfg["problem"] == "twod":
        nodes = int(cfg["golden_nodes"])
        for name in PROFILES["twod"]["qois"]:
            value, err = oracle.expectation_with_error(
                setup["pi"], setup["integrand"](name), setup["box"], nodes
            )
            goldens[f"twod/{name}"] = {
                "value": value,
                "error_estimate": err,
                "spec": {"rule": "trapezoid", "nodes": nodes, "sigma": cfg["sigma"]},
            }
    else:
        comps = fit_mixture(cfg, setup)
        eps_fine = cfg["eps0"] * LEVEL_FACTOR ** -(cfg["levels"] - 1)
        model = build_combined(cfg, setup, eps_fine, comps)
        qois = list(problems.QOI_NAMES)
        f_multi = _multi_integrand(cfg, setup, qois)
        n_ref = int(cfg["reference_n"])
        _, ones, ratios, _ = normalized_estimates(
            cfg, "combined", model, f_multi, len(qois), n_ref
        )
        for name, value in zip(qois, ratios):
            goldens[f"predprey/{name}"] = {
                "value": float(value),
                "error_estimate": None,
                "spec": {
                    "reference_n": n_ref,
                    "eps": eps_fine,
                    "unit_mass_estimate": ones,
                    "seed": cfg["seed"],
                },
            }
    path = _golden_path(cfg)
    existing = oracle.load_goldens(path) if path.exists() else {}
    existing.update(goldens)
    oracle.save_goldens(path, existing)
    print(path.resolve())
    for key in sorted(goldens):
        print(f"{key} = {goldens[key]['value']!r}")
    return 0


def cmd_approx(cfg) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    setup = setup_problem(cfg)
    eps = cfg["eps0"] * LEVEL_FACTOR ** -int(cfg["level"])
    stem = f"approx_{cfg['problem']}_{cfg['method']}_k{cfg['level']}"
    if cfg["method"] == "adaptive":
        surr, rep = build_adaptive(cfg, setup, eps)
        (out / f"{stem}.json").write_text(surrogate_to_json(surr) + "\n")
        (out / f"{stem}_report.json").write_text(rep.to_json() + "\n")
        print(out / f"{stem}.json")
        print(rep.to_json())
    else:
        comps = fit_mixture(cfg, setup)
        model = build_combined(cfg, setup, eps, comps)
        (out / f"{stem}.json").write_text(pou.model_to_json(model) + "\n")
        print(out / f"{stem}.json")
        print(
            json.dumps(
                {
                    "c": model.c,
                    "epsilon": model.epsilon,
                    "evaluations": model.evaluations,
                    "components": len(model.entries),
                }
            )
        )
    return 0


def _psi_ratio_integrand(comps):
    log_alpha = np.log(np.array([c.alpha for c in comps]))

    def f(X):
        X = np.atleast_2d(X)
        logs = np.stack([c.log_pdf(X) for c in comps], axis=1) + log_alpha
        m = logs.max(axis=1)
        psi = np.exp(m) * np.exp(logs - m[:, None]).sum(axis=1)
        return 1.0 / psi

    return f


def cmd_integrate(cfg) -> int:
    setup = setup_problem(cfg)
    qois = resolve_qois(cfg)
    eps = cfg["eps0"] * LEVEL_FACTOR ** -int(cfg["level"])
    N = int(cfg["n"]) if cfg.get("n") else int(cfg["n0"]) * LEVEL_FACTOR ** int(cfg["level"])
    result = {
        "problem": cfg["problem"],
        "method": cfg["method"],
        "level": int(cfg["level"]),
        "N": N,
        "eps": eps,
    }
    if cfg["method"] == "adaptive":
        built, rep = build_adaptive(cfg, setup, eps)
        result["build"] = json.loads(rep.to_json())
    else:
        comps = fit_mixture(cfg, setup)
        built = build_combined(cfg, setup, eps, comps)
        result["build"] = {
            "c": built.c,
            "epsilon": built.epsilon,
            "evaluations": built.evaluations,
        }
    f_multi = _multi_integrand(cfg, setup, qois)
    values, ones, ratios, details = normalized_estimates(
        cfg, cfg["method"], built, f_multi, len(qois), N
    )
    result["estimates"] = {
        name: {"raw": float(v), "normalized": float(r)}
        for name, v, r in zip(qois, values, ratios)
    }
    result["unit_mass_estimate"] = ones
    result["allocation"] = details
    box = np.asarray(setup["box"], dtype=float)
    result["g_diagnostic"] = g_diagnostic(np.ones(box.shape[0]), 1.0, box, max(N, 2))
    if cfg["method"] == "combined":
        comps_g = [e.gaussian for e in built.entries]
        psi_f = _psi_ratio_integrand(comps_g)

        def with_unit(X):
            X = np.atleast_2d(X)
            return np.column_stack([psi_f(X), np.ones(X.shape[0])])

        vals, _, ratio, _ = normalized_estimates(cfg, "combined", built, with_unit, 1, N)
        result["pi_over_psi_estimate"] = float(ratio[0])
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_converge(cfg) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    setup = setup_problem(cfg)
    qois = resolve_qois(cfg)
    path = _golden_path(cfg)
    if not path.exists():
        raise ConfigError(
            f"no golden values at {path}; run `qmcmix oracle --problem {cfg['problem']}` first"
        )
    goldens = oracle.load_goldens(path)
    for name in qois:
        if setup["golden_name"](name) not in goldens:
            raise ConfigError(
                f"golden value for {name} missing; run `qmcmix oracle --problem "
                f"{cfg['problem']}` first"
            )

    records = [
        ConvergenceRecord(method=cfg["method"], problem=cfg["problem"], qoi=name)
        for name in qois
    ]
    f_multi = _multi_integrand(cfg, setup, qois)
    comps = fit_mixture(cfg, setup) if cfg["method"] == "combined" else None

    for eps, N in level_schedule(cfg):
        if cfg["method"] == "adaptive":
            built, rep = build_adaptive(cfg, setup, eps)
            evals = rep.evaluations
        else:
            built = build_combined(cfg, setup, eps, comps)
            evals = built.evaluations
        _, _, ratios, _ = normalized_estimates(cfg, cfg["method"], built, f_multi, len(qois), N)
        for rec, name, value in zip(records, qois, ratios):
            golden = goldens[setup["golden_name"](name)]["value"]
            rec.append(N, abs(float(value) - golden), evals, float(value))

    stem = f"converge_{cfg['problem']}_{cfg['method']}"
    box = np.asarray(setup["box"], dtype=float)
    extras = {
        "delta": cfg["delta"] if not isinstance(cfg["delta"], str) else "remark",
        "levels": cfg["levels"],
        "eps0": cfg["eps0"],
        "n0": cfg["n0"],
        "seed": cfg["seed"],
        "paper_scale": bool(cfg.get("paper_scale")),
        "g_diagnostic_at_nmax": g_diagnostic(
            np.ones(box.shape[0]), 1.0, box, level_schedule(cfg)[-1][1]
        ),
    }
    report.write_csv(out / f"{stem}.csv", records)
    report.write_summary(out / f"{stem}.json", records, extras)
    figures.render_convergence(
        out / f"{stem}.png", records, title=f"{cfg['problem']} / {cfg['method']}"
    )
    figures.render_evaluations(
        out / f"{stem}_evals.png", records, title=f"{cfg['problem']} / {cfg['method']}"
    )
    print(out / f"{stem}.csv")
    for rec in records:
        try:
            slope = report.fit_slope(rec)
            print(f"{rec.qoi}: slope {slope:.3f} errors {['%.3g' % e for e in rec.errors]}")
        except InsufficientDataError:
            print(f"{rec.qoi}: slope n/a errors {['%.3g' % e for e in rec.errors]}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    handler = {
        "dataset": cmd_dataset,
        "oracle": cmd_oracle,
        "approx": cmd_approx,
        "integrate": cmd_integrate,
        "converge": cmd_converge,
    }[args.command]
    try:
        return handler(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
