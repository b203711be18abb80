"""Command-line entry point: ``gibbstf {simulate,estimate,replicate,covariance,diagnose}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import asymptotics, diagnostics, estimate, experiment
from .core import Window, read_pattern, write_pattern
from .models import beta_gamma, model_from_json, theta_from_beta_gamma
from .sim import SamplerConfig, sample_gibbs, sample_replicates
from .testfn import from_json as tests_from_json

EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED = 0, 2, 3


def parse_h(spec: str) -> dict:
    """``count:0.05``, ``fiksel:0.05``, ``strauss_indicator:2``, ``gradV``,
    ``constant``, ``exp_energy``, ``per``, ``iso`` or a JSON object."""
    spec = spec.strip()
    if spec.startswith("{"):
        return json.loads(spec)
    kind, _, arg = spec.partition(":")
    key = {"count": "r", "fiksel": "r", "strauss_indicator": "k", "gradV": "i", "constant": "c", "per": "R", "iso": "R"}
    out = {"type": kind}
    if arg:
        if kind not in key:
            raise ValueError(f"test function {kind!r} takes no argument")
        out[key[kind]] = int(arg) if kind in ("strauss_indicator", "gradV") else float(arg)
    return out


def model_desc(args) -> dict:
    if args.model == "multistrauss":
        return {"type": "multistrauss", "radii": args.radii}
    if args.model == "poisson":
        return {"type": "poisson"}
    return {"type": args.model, "R": args.R}


def theta_arg(args):
    if args.theta is not None:
        return np.asarray(args.theta, dtype=float)
    if args.beta is not None:
        return theta_from_beta_gamma(args.beta, args.gamma if args.gamma is not None else 1.0)
    return None


def _dump(obj, path):
    text = json.dumps(obj, indent=2)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        print(text)


def _add_model_args(p):
    p.add_argument("--model", default="strauss", choices=["strauss", "multistrauss", "area", "poisson"])
    p.add_argument("--R", type=float, default=0.05, help="interaction radius")
    p.add_argument("--radii", type=float, nargs="+", help="ascending radii for multistrauss")
    p.add_argument("--theta", type=float, nargs="+")
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)


def cmd_simulate(args) -> int:
    model = model_from_json(model_desc(args))
    theta = theta_arg(args)
    if theta is None:
        raise experiment.ConfigError("give --theta or --beta/--gamma")
    window = Window(args.lower, args.upper)
    sc = SamplerConfig(seed=args.seed, burn_in=args.burn_in, steps_per_point=args.steps_per_point)
    cfg = sample_gibbs(model, theta, window, sc)
    write_pattern(cfg, args.out)
    logging.info("wrote %d points to %s", len(cfg), args.out)
    return EXIT_OK


def _fit(args, cfg, model, window):
    if args.method == "explicit":
        return estimate.fit_strauss_explicit(cfg, window, args.R, args.resolution)
    quad = estimate.QuadratureScheme(kind=args.quadrature, n_dummy=args.n_dummy, seed=args.seed)
    if args.method == "mple":
        return estimate.fit_mple(cfg, window, model, quadrature=quad)
    specs = [parse_h(s) for s in (args.h or [])]
    if not specs:
        raise experiment.ConfigError("method tf needs at least one --h")
    return estimate.fit_tf(cfg, window, tests_from_json(specs, model), model, quadrature=quad)


def _window_of(args, cfg):
    erosion = args.erode if args.erode is not None else 0.0
    return cfg.carrier.eroded(erosion)


def cmd_estimate(args) -> int:
    model = model_from_json(model_desc(args))
    cfg = read_pattern(args.pattern)
    window = _window_of(args, cfg)
    rep = _fit(args, cfg, model, window)
    out = rep.to_json()
    if args.report == "beta_gamma" and model.p == 2:
        out["beta"], out["gamma"] = beta_gamma(rep.theta_hat)
    _dump(out, args.out)
    return EXIT_OK


def cmd_replicate(args) -> int:
    exp = experiment.ExperimentConfig.load(args.config)
    if args.out_dir:
        exp.output_dir = args.out_dir
    res = experiment.run_replication(exp)
    for rec in res.summary:
        logging.info("%s", rec)
    if res.all_failed:
        return EXIT_ALL_FAILED
    return EXIT_OK


def cmd_covariance(args) -> int:
    if args.config:
        exp = experiment.ExperimentConfig.load(args.config)
        if args.out_dir:
            exp.output_dir = args.out_dir
        res = experiment.run_replication(exp)
        if res.all_failed:
            return EXIT_ALL_FAILED
        out = experiment.run_covariance_study(exp, rows=res.rows)
        _dump(out, args.out)
        return EXIT_OK
    if not args.pattern:
        raise experiment.ConfigError("give --config or --pattern")
    model = model_from_json(model_desc(args))
    cfg = read_pattern(args.pattern)
    window = _window_of(args, cfg)
    theta = theta_arg(args)
    if theta is None:
        theta = _fit(args, cfg, model, window).theta_hat
    if args.method == "explicit":
        specs = [{"type": "strauss_indicator", "k": 1}, {"type": "strauss_indicator", "k": 2}]
    elif args.method == "mple":
        specs = [{"type": "gradV"}]
    else:
        specs = [parse_h(s) for s in args.h]
    tests = tests_from_json(specs, model)
    rep = asymptotics.covariance_report(cfg, window, tests, model, theta, args.D_block)
    out = rep.to_json()
    out["theta"] = list(map(float, theta))
    out["avar"] = (rep.sandwich / window.volume()).tolist()
    _dump(out, args.out)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    exp = experiment.ExperimentConfig.load(args.config)
    model = exp.build_model()
    d = exp.diagnose
    tests = tests_from_json(d.get("h", [{"type": "gradV"}]), model)
    tau = max(exp.taus)
    window = exp.estimation_window(tau)
    m = int(d.get("replicates", exp.replicates))
    patterns = [p.restrict(exp.observation_window(tau))
                for p in sample_replicates(model, exp.theta_star, exp.carrier, m, exp.sampler_config(0), exp.base_seed)]
    if args.check == "gnz":
        theta = d.get("theta")
        rep = diagnostics.gnz_balance(model, exp.theta_star, tests, patterns=patterns, window=window, theta=theta)
        out = rep.to_json()
    elif args.check == "profile":
        axes = d.get("grid")
        if axes:
            thetas, shape = diagnostics.product_grid(*[np.linspace(*a) for a in axes])
        else:
            thetas, shape = diagnostics.grid_around(exp.theta_star, d.get("half_widths", [0.2, 0.3]))
        rep = diagnostics.contrast_profile(patterns, window, model, exp.theta_star, tests, thetas, shape)
        out = rep.to_json()
    else:
        theta = d.get("theta", exp.theta_star.tolist())
        rep = diagnostics.det_check(model, exp.theta_star, theta, tests, patterns, window,
                                    n_tuples=int(d.get("n_tuples", 2000)), bins=int(d.get("bins", 50)))
        out = rep.to_json()
        if args.scatter:
            rep.write_scatter(args.scatter)
    _dump(out, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbstf", description="Takacs-Fiksel estimation for Gibbs point processes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one pattern")
    _add_model_args(s)
    s.add_argument("--lower", type=float, nargs="+", default=[-0.05, -0.05])
    s.add_argument("--upper", type=float, nargs="+", default=[3.05, 3.05])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--burn-in", type=int, default=SamplerConfig.burn_in)
    s.add_argument("--steps-per-point", type=float, default=SamplerConfig.steps_per_point)
    s.add_argument("--out", required=True, help="pattern CSV; a .json window file is written next to it")
    s.set_defaults(func=cmd_simulate)

    for name, helptext, func in (
        ("estimate", "fit one pattern", cmd_estimate),
        ("covariance", "plug-in or Monte-Carlo sandwich covariance", cmd_covariance),
    ):
        e = sub.add_parser(name, help=helptext)
        _add_model_args(e)
        e.add_argument("--pattern", required=(name == "estimate"))
        e.add_argument("--method", default="explicit", choices=list(experiment.METHODS))
        e.add_argument("--h", action="append", help="test function, e.g. count:0.05 (repeatable)")
        e.add_argument("--erode", type=float, help="erosion margin applied to the pattern window")
        e.add_argument("--quadrature", default="stratified_grid", choices=["stratified_grid", "monte_carlo"])
        e.add_argument("--n-dummy", type=int)
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--resolution", type=int, default=512, help="V_k grid cells per unit length")
        e.add_argument("--report", default="beta_gamma", choices=["beta_gamma", "theta"])
        e.add_argument("--out")
        e.set_defaults(func=func)
        if name == "covariance":
            e.add_argument("--config")
            e.add_argument("--out-dir")
            e.add_argument("--D-block", dest="D_block", type=float)

    r = sub.add_parser("replicate", help="run a replication study from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_replicate)

    d = sub.add_parser("diagnose", help="GNZ balance, contrast profile or determinant sign check")
    d.add_argument("--config", required=True)
    d.add_argument("--check", required=True, choices=["gnz", "profile", "det"])
    d.add_argument("--scatter", help="CSV of (v, Psi(v)) bins for --check det")
    d.add_argument("--out")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", UserWarning)
    try:
        return args.func(args)
    except (experiment.ConfigError, json.JSONDecodeError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
