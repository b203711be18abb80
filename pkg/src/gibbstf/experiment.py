"""Seeded replication study: simulate, fit every method at every window
size, summarise, and compare empirical and sandwich covariances."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import asymptotics, estimate
from .core import Window
from .models import GibbsModel, beta_gamma, model_from_json, theta_from_beta_gamma
from .sim import SamplerConfig, sample_gibbs
from .testfn import from_json as tests_from_json, h_gradV, h_strauss_indicator

log = logging.getLogger(__name__)

METHODS = ("tf", "mple", "explicit")


class ConfigError(ValueError):
    pass


@dataclass
class MethodSpec:
    name: str
    label: str
    h: list = field(default_factory=list)

    @classmethod
    def from_json(cls, desc) -> "MethodSpec":
        if isinstance(desc, str):
            desc = {"name": desc}
        name = desc.get("name")
        if name not in METHODS:
            raise ConfigError(f"unknown method {name!r}; expected one of {METHODS}")
        if name == "tf" and not desc.get("h"):
            raise ConfigError("method 'tf' needs a list of test functions under 'h'")
        return cls(name, desc.get("label", name), list(desc.get("h", [])))


@dataclass
class ExperimentConfig:
    model: dict
    theta_star: np.ndarray
    taus: list
    replicates: int
    methods: list
    carrier: Window
    erosion: float
    base_seed: int = 0
    quadrature: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    resolution: int = 512
    report: str = "beta_gamma"
    output_dir: str = "gibbstf-out"
    covariance: dict = field(default_factory=dict)
    diagnose: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, desc: dict) -> "ExperimentConfig":
        try:
            model = model_from_json(desc["model"])
            ts = desc["theta_star"]
            if isinstance(ts, dict) and "beta" in ts:
                theta = theta_from_beta_gamma(ts["beta"], ts["gamma"])
            elif isinstance(ts, dict):
                theta = np.asarray(ts["theta"], dtype=float)
            else:
                theta = np.asarray(ts, dtype=float)
            model.check(theta)
            taus = [float(t) for t in desc.get("taus", [1.0])]
            erosion = float(desc.get("erosion", model.D))
            if "carrier" in desc:
                carrier = Window(desc["carrier"]["lower"], desc["carrier"]["upper"])
            else:
                carrier = Window.square(-erosion, max(taus) + erosion)
            m = int(desc.get("replicates", 1))
            methods = [MethodSpec.from_json(x) for x in desc.get("methods", ["explicit"])]
        except KeyError as e:
            raise ConfigError(f"missing config key {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        if m < 1:
            raise ConfigError("replicates must be >= 1")
        report = desc.get("report", "beta_gamma")
        if report not in ("beta_gamma", "theta"):
            raise ConfigError("report must be 'beta_gamma' or 'theta'")
        cfg = cls(
            model=desc["model"], theta_star=theta, taus=taus, replicates=m, methods=methods, carrier=carrier,
            erosion=erosion, base_seed=int(desc.get("base_seed", 0)), quadrature=dict(desc.get("quadrature", {})),
            sampler=dict(desc.get("sampler", {})), resolution=int(desc.get("resolution", 512)), report=report,
            output_dir=desc.get("output_dir", "gibbstf-out"), covariance=dict(desc.get("covariance", {})),
            diagnose=dict(desc.get("diagnose", {})),
        )
        cfg.validate(model)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            desc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_json(desc)

    def validate(self, model: GibbsModel):
        for tau in self.taus:
            if not self.carrier.contains_window(self.observation_window(tau)):
                raise ConfigError(f"tau={tau:g} plus erosion does not fit in the carrier {self.carrier}")
        for ms in self.methods:
            try:
                self.tests_for(ms, model)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"method {ms.label}: {e}") from e
            if ms.name == "explicit" and not hasattr(model, "R"):
                raise ConfigError("the explicit estimator needs a Strauss model")

    def build_model(self) -> GibbsModel:
        return model_from_json(self.model)

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(seed=seed, **self.sampler)

    def quadrature_scheme(self) -> estimate.QuadratureScheme:
        return estimate.QuadratureScheme(**self.quadrature)

    def observation_window(self, tau: float) -> Window:
        lo = np.asarray(self.carrier.lower)
        hi = lo + tau + 2 * self.erosion
        # snap to the carrier when the two differ by rounding only
        top = np.asarray(self.carrier.upper)
        hi = np.where(np.abs(hi - top) <= 1e-9, top, hi)
        return Window(tuple(lo), tuple(hi))

    def estimation_window(self, tau: float) -> Window:
        return self.observation_window(tau).eroded(self.erosion)

    def tests_for(self, ms: MethodSpec, model: GibbsModel) -> list:
        if ms.name == "tf":
            return tests_from_json(ms.h, model)
        if ms.name == "mple":
            return h_gradV(model)
        return [h_strauss_indicator(1).bind(model), h_strauss_indicator(2).bind(model)]


def fit_method(ms: MethodSpec, cfg, window: Window, model: GibbsModel, exp: ExperimentConfig):
    if ms.name == "explicit":
        return estimate.fit_strauss_explicit(cfg, window, model.R, exp.resolution)
    if ms.name == "mple":
        return estimate.fit_mple(cfg, window, model, quadrature=exp.quadrature_scheme())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return estimate.fit_tf(cfg, window, exp.tests_for(ms, model), model, quadrature=exp.quadrature_scheme())


def run_one(exp: ExperimentConfig, r: int) -> list:
    """Rows for replicate r: one per (tau, method)."""
    model = exp.build_model()
    seed = exp.base_seed + r
    pattern = sample_gibbs(model, exp.theta_star, exp.carrier, exp.sampler_config(seed))
    rows = []
    for tau in exp.taus:
        obs = exp.observation_window(tau)
        sub = pattern.restrict(obs)
        lam = exp.estimation_window(tau)
        for ms in exp.methods:
            row = {"replicate": r, "seed": seed, "tau": tau, "method": ms.label, "n_points": int(np.sum(sub.in_window(lam)))}
            try:
                rep = fit_method(ms, sub, lam, model, exp)
                th = rep.theta_hat
                row.update(status="ok", converged=rep.converged, U_value=rep.U_value)
            except (estimate.DegenerateCounts, estimate.NotConverged, FloatingPointError, np.linalg.LinAlgError) as e:
                th = np.full(model.p, np.nan)
                row.update(status=type(e).__name__, converged=False, U_value=float("nan"))
            for i, v in enumerate(th):
                row[f"theta{i + 1}"] = float(v)
            if model.p == 2:
                b, g = beta_gamma(th) if np.all(np.isfinite(th)) else (float("nan"), float("nan"))
                row["beta"], row["gamma"] = b, g
            rows.append(row)
    return rows


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GIBBSTF_THREADS", "1")))
    except ValueError:
        return 1


def collect(exp: ExperimentConfig, threads: Optional[int] = None) -> list:
    threads = threads or _threads()
    idx = range(exp.replicates)
    if threads == 1:
        chunks = [run_one(exp, r) for r in idx]
    else:
        with ProcessPoolExecutor(threads) as pool:
            chunks = list(pool.map(run_one, [exp] * exp.replicates, idx))
    return [row for chunk in chunks for row in chunk]


def _mean_sd(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return float("nan"), float("nan")
    sd = float(x.std(ddof=1)) if len(x) > 1 else float("nan")
    return float(x.mean()), sd


def summarise(rows: list, exp: ExperimentConfig) -> list:
    cols = ["beta", "gamma"] if exp.report == "beta_gamma" else [k for k in rows[0] if k.startswith("theta")]
    out = []
    for tau in exp.taus:
        for ms in exp.methods:
            sel = [r for r in rows if r["tau"] == tau and r["method"] == ms.label]
            ok = [r for r in sel if r["status"] == "ok"]
            rec = {"tau": tau, "method": ms.label, "n_ok": len(ok), "n_failed": len(sel) - len(ok)}
            for c in cols:
                mean, sd = _mean_sd([r[c] for r in ok])
                rec[f"mean_{c}"], rec[f"sd_{c}"] = mean, sd
            out.append(rec)
    return out


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def write_csv(rows: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0]) if rows else []
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return path


@dataclass
class ReplicationResult:
    rows: list
    summary: list

    @property
    def all_failed(self) -> bool:
        return all(r["status"] != "ok" for r in self.rows)


def run_replication(exp: ExperimentConfig, threads: Optional[int] = None, write: bool = True) -> ReplicationResult:
    rows = collect(exp, threads)
    summary = summarise(rows, exp)
    if write:
        out = Path(exp.output_dir)
        write_csv(rows, out / "replicates.csv")
        write_csv(summary, out / "summary.csv")
    return ReplicationResult(rows, summary)


def empirical_covariance(rows: list, tau: float, method: str, p: int) -> np.ndarray:
    ok = [r for r in rows if r["tau"] == tau and r["method"] == method and r["status"] == "ok"]
    th = np.array([[r[f"theta{i + 1}"] for i in range(p)] for r in ok])
    if len(th) < 2:
        return np.full((p, p), np.nan)
    return np.cov((tau * th).T, ddof=1).reshape(p, p)


def histogram(values, bins: int = 20) -> dict:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    counts, edges = np.histogram(values, bins=bins)
    return {
        "counts": counts.tolist(),
        "edges": edges.tolist(),
        "normal_mean": float(values.mean()) if len(values) else float("nan"),
        "normal_var": float(values.var(ddof=1)) if len(values) > 1 else float("nan"),
    }


def run_covariance_study(exp: ExperimentConfig, rows: Optional[list] = None, threads: Optional[int] = None,
                         write: bool = True) -> dict:
    """Empirical covariance of tau * theta_hat per tau, histogram data of
    tau * (theta_hat - theta_star), and a Monte-Carlo sandwich built from
    E and Sigma averaged over fresh patterns at theta_star."""
    model = exp.build_model()
    cov = exp.covariance
    label = cov.get("method", exp.methods[0].label)
    ms = next((m for m in exp.methods if m.label == label), None)
    if ms is None:
        raise ConfigError(f"covariance method {label!r} is not among the configured methods")
    if rows is None:
        rows = collect(exp, threads)
    out = {"method": label, "theta_star": exp.theta_star.tolist(), "taus": {}}
    for tau in exp.taus:
        ok = [r for r in rows if r["tau"] == tau and r["method"] == label and r["status"] == "ok"]
        entry = {"n_ok": len(ok), "empirical": empirical_covariance(rows, tau, label, model.p).tolist()}
        entry["histograms"] = [
            histogram([tau * (r[f"theta{i + 1}"] - exp.theta_star[i]) for r in ok], cov.get("bins", 20))
            for i in range(model.p)
        ]
        out["taus"][str(tau)] = entry
    n_mc = int(cov.get("sandwich_patterns", 20))
    if n_mc > 0:
        tau = max(exp.taus)
        lam = exp.estimation_window(tau)
        seeds = [exp.base_seed + int(cov.get("seed_offset", 1_000_000)) + k for k in range(n_mc)]
        patterns = [sample_gibbs(model, exp.theta_star, exp.carrier, exp.sampler_config(s)).restrict(exp.observation_window(tau))
                    for s in seeds]
        tests = exp.tests_for(ms, model)
        rep = asymptotics.pooled_sandwich(patterns, lam, tests, model, exp.theta_star, cov.get("D_block"), None,
                                          int(cov.get("per_block", 16)))
        out["sandwich"] = rep.to_json()
    if write:
        path = Path(exp.output_dir) / "covariance.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(out, indent=2))
    return out
