"""Monte-Carlo checks of the GNZ identity and of identifiability."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import Configuration, Window
from .estimate import GNZTerms, QuadratureScheme, gnz_terms
from .models import GibbsModel
from .sim import SamplerConfig, make_rng, sample_replicates

Z_LIMIT = 3.0
SIGN_AGREEMENT = 0.95
ZERO_TOL = 1e-12


class InsufficientSupport(ValueError):
    pass


# --- GNZ balance --------------------------------------------------------------


@dataclass
class BalanceReport:
    labels: list
    mean: np.ndarray
    se: np.ndarray
    z: np.ndarray
    values: np.ndarray  # (m, K) per-replicate |Lambda|^-1 residuals
    theta: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z) < Z_LIMIT))

    def to_json(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "m": int(self.values.shape[0]),
            "tests": [
                {"h": l, "mean": float(a), "se": float(s), "z": float(z)}
                for l, a, s, z in zip(self.labels, self.mean, self.se, self.z)
            ],
            "passed": self.passed,
        }


def gnz_balance(model: GibbsModel, theta_star, tests, m: int = 100, carrier: Optional[Window] = None,
                window: Optional[Window] = None, sampler: SamplerConfig = SamplerConfig(), theta=None,
                patterns: Optional[Sequence[Configuration]] = None, quadrature: Optional[QuadratureScheme] = None,
                base_seed: int = 0) -> BalanceReport:
    """Mean over replicates of |Lambda|^-1 C_Lambda(phi; h, theta) with a
    z-score per test function.  Patterns are simulated at ``theta_star``;
    the residual is evaluated at ``theta`` (default ``theta_star``)."""
    theta_star = model.check(theta_star)
    theta = theta_star if theta is None else model.check(theta)
    if patterns is None:
        if m < 30:
            raise ValueError("m >= 30 replicates required")
        patterns = sample_replicates(model, theta_star, carrier, m, sampler, base_seed)
    elif len(patterns) < 30:
        raise ValueError("m >= 30 replicates required")
    window = window or patterns[0].carrier.eroded(max([model.D] + [h.bind(model).range for h in tests]))
    vol = window.volume()
    vals = np.array([gnz_terms(p, window, tests, model, quadrature).residuals(theta)[0] / vol for p in patterns])
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(len(vals))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean / se, 0.0)
    return BalanceReport([h.label for h in tests], mean, se, z, vals, theta)


# --- contrast profile ----------------------------------------------------------


def product_grid(*axes) -> tuple:
    """All combinations of the axis values, first axis slowest.
    Returns (thetas of shape (G, p), grid shape)."""
    mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1), mesh[0].shape


def grid_around(theta_star, half_widths, n: int = 21) -> tuple:
    axes = [np.linspace(t - w, t + w, n) for t, w in zip(theta_star, half_widths)]
    return product_grid(*axes)


@dataclass
class ProfileReport:
    thetas: np.ndarray
    shape: tuple
    U: np.ndarray
    se: np.ndarray
    theta_star: np.ndarray
    m: int

    @property
    def argmin(self) -> int:
        return int(np.argmin(self.U))

    def near_minimum(self, k: float = Z_LIMIT) -> np.ndarray:
        """Cells whose U is within k combined standard errors of the minimum."""
        i = self.argmin
        return self.U <= self.U[i] + k * np.sqrt(self.se ** 2 + self.se[i] ** 2)

    def unique(self, k: float = Z_LIMIT) -> bool:
        near = self.near_minimum(k)
        near[self.argmin] = False
        return not near.any()

    def distant_near_minima(self, min_distance: float, k: float = Z_LIMIT) -> np.ndarray:
        """Indices of near-minimal cells farther than ``min_distance`` from theta_star."""
        far = np.linalg.norm(self.thetas - self.theta_star, axis=1) > min_distance
        return np.flatnonzero(self.near_minimum(k) & far)

    def to_json(self) -> dict:
        i = self.argmin
        return {
            "m": self.m,
            "theta_star": self.theta_star.tolist(),
            "grid_shape": list(self.shape),
            "argmin": self.thetas[i].tolist(),
            "U_min": float(self.U[i]),
            "unique": self.unique(),
            "near_minimum": self.thetas[self.near_minimum()].tolist(),
            "U": self.U.tolist(),
            "se": self.se.tolist(),
        }


def contrast_profile(patterns: Sequence[Configuration], window: Window, model: GibbsModel, theta_star, tests,
                     thetas, shape=None, quadrature: Optional[QuadratureScheme] = None) -> ProfileReport:
    """Monte-Carlo estimate of the limiting contrast
    U(theta) = sum_k E[h_k(theta) (exp(-<theta, V>) - exp(-<theta_star, V>))]^2
    from dummy-point averages over patterns simulated at ``theta_star``.
    The standard error uses the delta method on each squared mean."""
    theta_star = model.check(theta_star)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    for t in thetas:
        model.check(t)
    quadrature = quadrature or QuadratureScheme(n_dummy=4096)
    vol = window.volume()
    tests = [h.bind(model) for h in tests]
    K = len(tests)
    per = np.empty((len(patterns), len(thetas), K))
    for r, cfg in enumerate(patterns):
        xy, w, _ = quadrature.points(window, len(cfg))
        terms = GNZTerms(cfg, model, tests, xy, w, np.zeros(0, dtype=np.int64))
        _, V, F, wt = terms.dummy
        base = np.exp(-(V @ theta_star))
        for j, th in enumerate(thetas):
            diff = wt * (np.exp(-(V @ th)) - base) / vol
            for k, h in enumerate(terms.tests):
                per[r, j, k] = np.dot(h.values(F[k], V, th), diff)
    mu = per.mean(axis=0)
    s2 = per.var(axis=0, ddof=1) / len(patterns) if len(patterns) > 1 else np.zeros_like(mu)
    U = np.sum(mu ** 2, axis=1)
    se = np.sqrt(np.sum(4 * mu ** 2 * s2 + 2 * s2 ** 2, axis=1))
    return ProfileReport(thetas, tuple(shape) if shape is not None else (len(thetas),), U, se, theta_star, len(patterns))


# --- [Det] sign check ------------------------------------------------------------


@dataclass
class DetCheckReport:
    n_tuples: int
    frac_positive: float
    frac_negative: float
    frac_zero: float
    verdict: str
    sign: int
    n_bins: int
    det_E_psi_v: float
    thresholds: dict = field(default_factory=dict)
    det_prime: Optional[dict] = None
    bins_v: Optional[np.ndarray] = None
    bins_psi: Optional[np.ndarray] = None
    bins_mass: Optional[np.ndarray] = None

    def to_json(self) -> dict:
        out = {
            "n_tuples": self.n_tuples,
            "frac_positive": self.frac_positive,
            "frac_negative": self.frac_negative,
            "frac_zero": self.frac_zero,
            "verdict": self.verdict,
            "sign": self.sign,
            "n_bins": self.n_bins,
            "det_E_psi_v": self.det_E_psi_v,
            "thresholds": self.thresholds,
        }
        if self.det_prime is not None:
            out["det_prime"] = self.det_prime
        return out

    def write_scatter(self, path) -> Path:
        """Per-bin (v, Psi_hat(v), mass) rows for external plotting."""
        path = Path(path)
        p, K = self.bins_v.shape[1], self.bins_psi.shape[1]
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"v{i + 1}" for i in range(p)] + [f"psi{k + 1}" for k in range(K)] + ["mass"])
            for v, s, m in zip(self.bins_v, self.bins_psi, self.bins_mass):
                w.writerow([repr(float(a)) for a in v] + [repr(float(a)) for a in s] + [int(m)])
        return path


def sample_v_h(patterns, window: Window, model: GibbsModel, tests, theta, n_locations: int = 2000, seed: int = 0):
    """V(x|phi) and h(x, phi; theta) at uniform locations x of the window,
    ``n_locations`` per pattern."""
    rng = make_rng(seed)
    tests = [h.bind(model) for h in tests]
    theta = np.asarray(theta, dtype=float)
    Vs, Hs = [], []
    for cfg in patterns:
        xy = rng.uniform(window.lower, window.upper, size=(n_locations, window.d))
        V = model.statistics(xy, cfg)
        H = np.column_stack([h.values(h.features(model, xy, cfg), V, theta) for h in tests])
        Vs.append(V)
        Hs.append(H)
    return np.vstack(Vs), np.vstack(Hs)


def bin_by_v(V: np.ndarray, H: np.ndarray, bins: int = 50, atom_fraction: float = 0.01):
    """Group samples by their statistic vector.

    Values carrying at least ``atom_fraction`` of the samples are kept as
    their own bins; the rest are cut into about ``bins`` cells by
    per-coordinate quantiles of the varying coordinates.  Returns
    (bin means of V, bin means of H, bin sizes).
    """
    n = len(V)
    uniq, inv, counts = np.unique(V, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    atom = counts[inv] >= max(2, atom_fraction * n)
    label = np.full(n, -1, dtype=np.int64)
    label[atom] = inv[atom]
    rest = ~atom
    offset = len(uniq)
    if rest.any():
        Vr = V[rest]
        vary = [j for j in range(V.shape[1]) if np.ptp(Vr[:, j]) > 0]
        if not vary:
            label[rest] = offset
        else:
            per_dim = max(1, int(round(bins ** (1.0 / len(vary)))))
            code = np.zeros(len(Vr), dtype=np.int64)
            for j in vary:
                edges = np.quantile(Vr[:, j], np.linspace(0, 1, per_dim + 1)[1:-1])
                code = code * per_dim + np.searchsorted(edges, Vr[:, j], side="right")
            label[rest] = offset + code
    _, lab = np.unique(label, return_inverse=True)
    lab = lab.reshape(-1)
    mass = np.bincount(lab).astype(float)
    bv = np.stack([np.bincount(lab, weights=V[:, j]) for j in range(V.shape[1])], axis=1) / mass[:, None]
    bh = np.stack([np.bincount(lab, weights=H[:, k]) for k in range(H.shape[1])], axis=1) / mass[:, None]
    return bv, bh, mass


def _sample_tuples(rng, mass, p, n_tuples):
    prob = mass / mass.sum()
    return np.array([rng.choice(len(mass), size=p, replace=False, p=prob) for _ in range(n_tuples)])


def _products(bv, bh, tuples, cols):
    dv = np.linalg.det(bv[tuples])
    dh = np.linalg.det(bh[tuples][:, :, cols])
    scale = np.prod(np.linalg.norm(bv[tuples], axis=2), axis=1) * np.prod(
        np.linalg.norm(bh[tuples][:, :, cols], axis=2), axis=1
    )
    prod = dv * dh
    prod[np.abs(prod) <= ZERO_TOL * scale] = 0.0
    return prod


def det_prime_search(bv, bh, tuples) -> dict:
    """For K > p: look for coefficients c_I over the p-subsets I of the test
    functions such that sum_I c_I det(v) det(Psi^I(v)) >= 0 on every sampled
    tuple and > 0 on at least one (linear program, |c_I| <= 1)."""
    p, K = bv.shape[1], bh.shape[1]
    subsets = list(itertools.combinations(range(K), p))
    A = np.column_stack([_products(bv, bh, tuples, list(I)) for I in subsets])
    scale = np.abs(A).max() or 1.0
    A = A / scale
    res = linprog(-A.sum(axis=0), A_ub=-A, b_ub=np.zeros(len(A)), bounds=[(-1, 1)] * len(subsets), method="highs")
    found = bool(res.status == 0 and -res.fun > 1e-9)
    return {
        "found": found,
        "subsets": [list(I) for I in subsets],
        "coefficients": res.x.tolist() if res.status == 0 else None,
    }


def det_check(model: GibbsModel, theta_star, theta, tests, patterns: Sequence[Configuration], window: Window,
              n_tuples: int = 2000, bins: int = 50, n_locations: int = 2000, seed: int = 0,
              min_nonzero: int = 20) -> DetCheckReport:
    """Sign of det(v_1..v_p) det(Psi(v_1)..Psi(v_p)) over sampled p-tuples of
    v-bins, Psi estimated by bin means of h.

    Verdict: ``consistent_with_Det`` when at least 95% of the nonzero
    products share one sign, ``violated`` when they do not or when every
    product vanishes although each h is nonzero somewhere, ``inconclusive``
    when fewer than ``min_nonzero`` products are nonzero or some h vanishes
    on every bin.  For K > p the sign test is replaced by the
    coefficient search of :func:`det_prime_search`.
    """
    theta_star = model.check(theta_star)
    theta = model.check(theta)
    p, K = model.p, len(tests)
    if K < p:
        raise ValueError("need K >= p test functions")
    V, H = sample_v_h(patterns, window, model, tests, theta, n_locations, seed)
    bv, bh, mass = bin_by_v(V, H, bins)
    if len(mass) < p:
        raise InsufficientSupport(f"only {len(mass)} distinct v-bins observed, need {p}")
    rng = make_rng(seed + 1)
    tuples = _sample_tuples(rng, mass, p, n_tuples)
    thresholds = {"sign_agreement": SIGN_AGREEMENT, "zero_tol": ZERO_TOL, "min_nonzero": min_nonzero, "bins": bins}
    det_prime = None
    if K == p:
        prod = _products(bv, bh, tuples, list(range(K)))
        det_E = float(np.linalg.det(H.T @ V / len(V)))
    else:
        det_prime = det_prime_search(bv, bh, tuples)
        # a found coefficient family gives a nonnegative combined product
        c = np.asarray(det_prime["coefficients"] or np.zeros(math.comb(K, p)))
        prod = np.column_stack(
            [_products(bv, bh, tuples, list(I)) for I in itertools.combinations(range(K), p)]
        ) @ c
        prod[np.abs(prod) <= ZERO_TOL * (np.abs(prod).max() or 1.0)] = 0.0
        det_E = float("nan")
    pos = float(np.mean(prod > 0))
    neg = float(np.mean(prod < 0))
    zero = 1.0 - pos - neg
    nonzero = int(np.sum(prod != 0))
    sign = 0
    # a test function that vanishes on every bin carries no information
    unobserved = bool(np.any(np.all(np.abs(bh) <= ZERO_TOL * (np.abs(bh).max() or 1.0), axis=0)))
    if nonzero == 0:
        verdict = "inconclusive" if unobserved else "violated"
    elif nonzero < min_nonzero:
        verdict = "inconclusive"
    else:
        agree = max(pos, neg) / (pos + neg)
        sign = 1 if pos >= neg else -1
        verdict = "consistent_with_Det" if agree >= SIGN_AGREEMENT else "violated"
        if det_prime is not None and not det_prime["found"]:
            verdict = "violated"
    return DetCheckReport(
        n_tuples=len(tuples), frac_positive=pos, frac_negative=neg, frac_zero=zero, verdict=verdict, sign=sign,
        n_bins=len(mass), det_E_psi_v=det_E, thresholds=thresholds, det_prime=det_prime,
        bins_v=bv, bins_psi=bh, bins_mass=mass,
    )
