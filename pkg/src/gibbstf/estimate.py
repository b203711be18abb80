"""Takacs-Fiksel contrast, its minimisation, the MPLE and the explicit
Strauss estimator."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import Configuration, Window
from .models import Box, GibbsModel
from .sim import make_rng
from .testfn import TestFunction

log = logging.getLogger(__name__)

COLLAR_TOL = 1e-9


class CollarMissing(ValueError):
    pass


class DegenerateCounts(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureScheme:
    """Dummy points for the integral term of the residuals.

    ``stratified_grid`` puts one point at each cell centre of a regular grid
    with about ``n_dummy`` cells (square cells as far as possible);
    ``monte_carlo`` draws ``n_dummy`` uniform points.  Without ``n_dummy``
    the default is four dummies per data point (at least 64).
    """

    kind: str = "stratified_grid"
    n_dummy: Optional[int] = None
    seed: int = 0
    fiksel_shortcut: bool = False

    def __post_init__(self):
        if self.kind not in ("stratified_grid", "monte_carlo"):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if self.n_dummy is not None and self.n_dummy < 1:
            raise ValueError("n_dummy must be >= 1")

    @classmethod
    def with_spacing(cls, window: Window, spacing: float, **kw) -> "QuadratureScheme":
        shape = grid_shape_for_spacing(window, spacing)
        return cls(n_dummy=int(np.prod(shape)), **kw)

    def resolve(self, n_data: int) -> int:
        return self.n_dummy if self.n_dummy is not None else max(64, 4 * n_data)

    def points(self, window: Window, n_data: int = 0):
        """(xy, weights, shape) with ``shape`` the grid shape (None for MC)."""
        n = self.resolve(n_data)
        vol = window.volume()
        if self.kind == "monte_carlo":
            rng = make_rng(self.seed)
            xy = rng.uniform(window.lower, window.upper, size=(n, window.d))
            return xy, np.full(n, vol / n), None
        shape = grid_shape(window, n)
        m = int(np.prod(shape))
        return window.midpoint_grid(shape), np.full(m, vol / m), shape

    def to_json(self) -> dict:
        return {"kind": self.kind, "n_dummy": self.n_dummy, "seed": self.seed, "fiksel_shortcut": self.fiksel_shortcut}


def grid_shape(window: Window, n: int) -> tuple:
    sides = window.sides
    h = (window.volume() / n) ** (1.0 / window.d)
    return tuple(max(1, int(round(s / h))) for s in sides)


def grid_shape_for_spacing(window: Window, spacing: float) -> tuple:
    return tuple(max(1, int(math.ceil(s / spacing - 1e-9))) for s in window.sides)


def check_collar(cfg: Configuration, window: Window, reach: float):
    if not cfg.carrier.contains_window(window.dilated(reach - COLLAR_TOL)):
        raise CollarMissing(
            f"carrier {cfg.carrier} does not contain {window} dilated by the range {reach:g}"
        )


class GNZTerms:
    """Theta-free ingredients of the residuals C(phi; h_k, theta).

    Sufficient statistics and test-function features are evaluated once at
    the dummy points and at the data points, then rows with identical
    (group, V, features) are merged, so evaluating all residuals at a new
    theta costs one pass over the distinct rows.  ``dummy_group`` and
    ``data_group`` optionally split the residuals into blocks.
    """

    def __init__(
        self, cfg: Configuration, model: GibbsModel, tests: Sequence[TestFunction],
        dummy_xy, dummy_w, data_idx, dummy_group=None, data_group=None, n_groups: int = 1,
        shortcut: bool = False,
    ):
        self.model = model
        self.tests = [h.bind(model) for h in tests]
        self.K = len(self.tests)
        self.n_groups = n_groups
        dummy_xy = np.asarray(dummy_xy, dtype=float).reshape(-1, cfg.d)
        data_idx = np.asarray(data_idx, dtype=np.int64)
        dg = np.zeros(len(dummy_xy), dtype=np.int64) if dummy_group is None else np.asarray(dummy_group)
        xg = np.zeros(len(data_idx), dtype=np.int64) if data_group is None else np.asarray(data_group)

        Vd = model.statistics(dummy_xy, cfg)
        Fd = [h.features(model, dummy_xy, cfg) for h in self.tests]
        Vx = model.statistics(cfg.xy[data_idx], cfg, exclude=data_idx)
        Fx = [h.features(model, cfg.xy[data_idx], cfg, exclude=data_idx) for h in self.tests]
        self._widths = [f.shape[1] for f in Fd]
        self.dummy = self._compress(dg, Vd, Fd, np.asarray(dummy_w, dtype=float))
        self.data = self._compress(xg, Vx, Fx, np.ones(len(data_idx)))
        self.n_data = np.bincount(xg, minlength=n_groups).astype(float)
        self.shortcuts = [h.shortcut_integral(1) if shortcut else None for h in self.tests]
        self.dummy_raw = (dummy_xy, np.asarray(dummy_w, dtype=float), Vd, Fd)

    def _compress(self, group, V, F, w):
        p = V.shape[1]
        rows = np.hstack([group[:, None].astype(float), V] + F)
        if rows.shape[0] == 0:
            return (np.zeros(0, dtype=np.int64), np.zeros((0, p)), [np.zeros((0, f.shape[1])) for f in F], np.zeros(0))
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        weights = np.bincount(inv, weights=w, minlength=uniq.shape[0])
        feats, col = [], 1 + p
        for width in self._widths:
            feats.append(uniq[:, col:col + width])
            col += width
        return uniq[:, 0].astype(np.int64), uniq[:, 1:1 + p], feats, weights

    def _per_group(self, g, x):
        return np.bincount(g, weights=x, minlength=self.n_groups)

    def integrals(self, theta) -> np.ndarray:
        """(n_groups, K) integral terms."""
        g, V, F, w = self.dummy
        weight = w * np.exp(-(V @ theta))
        out = np.empty((self.n_groups, self.K))
        for k, h in enumerate(self.tests):
            if self.shortcuts[k] is not None:
                out[:, k] = self.n_data * self.shortcuts[k]
            else:
                out[:, k] = self._per_group(g, h.values(F[k], V, theta) * weight)
        return out

    def sums(self, theta) -> np.ndarray:
        g, V, F, c = self.data
        out = np.empty((self.n_groups, self.K))
        for k, h in enumerate(self.tests):
            out[:, k] = self._per_group(g, h.values(F[k], V, theta) * c)
        return out

    def residuals(self, theta) -> np.ndarray:
        """(n_groups, K) residuals; a single row when ungrouped."""
        theta = np.asarray(theta, dtype=float)
        return self.integrals(theta) - self.sums(theta)

    def sensitivity(self, theta) -> np.ndarray:
        """(p, K) matrix of sum_j w_j h_k V_i exp(-<theta, V>) over dummies."""
        g, V, F, w = self.dummy
        weight = w * np.exp(-(V @ theta))
        H = np.column_stack([h.values(F[k], V, theta) for k, h in enumerate(self.tests)])
        return (V * weight[:, None]).T @ H

    def quadrature_error(self, theta, shape) -> np.ndarray:
        """Per test function error estimate of the ungrouped integral term:
        four paired-strata standard errors (adjacent grid cells paired)."""
        xy, w, V, F = self.dummy_raw
        theta = np.asarray(theta, dtype=float)
        e = np.exp(-(V @ theta))
        out = np.zeros(self.K)
        for k, h in enumerate(self.tests):
            y = h.values(F[k], V, theta) * e * w
            if shape is None:
                out[k] = 4 * math.sqrt(len(y)) * y.std()
                continue
            y = y.reshape(shape)
            m = (shape[0] // 2) * 2
            a, b = y[0:m:2], y[1:m:2]
            out[k] = 4 * math.sqrt(float(np.sum((a - b) ** 2)))
        return out


def reach_of(model: GibbsModel, tests: Sequence[TestFunction]) -> float:
    return max([model.D] + [h.range for h in tests])


def gnz_terms(cfg, window, tests, model, quadrature: Optional[QuadratureScheme] = None, check: bool = True):
    quadrature = quadrature or QuadratureScheme()
    tests = [h.bind(model) for h in tests]
    if check:
        check_collar(cfg, window, reach_of(model, tests))
    inside = np.flatnonzero(cfg.in_window(window))
    xy, w, shape = quadrature.points(window, len(inside))
    terms = GNZTerms(cfg, model, tests, xy, w, inside, shortcut=quadrature.fiksel_shortcut)
    terms.grid_shape = shape
    return terms


def residual(cfg, window, h, model, theta, quadrature=None, return_error: bool = False):
    """C_Lambda(phi; h, theta): integral of h exp(-V) over the window minus
    the sum of h(x, phi minus x) over data points in the window."""
    theta = model.check(theta)
    terms = gnz_terms(cfg, window, [h], model, quadrature)
    value = float(terms.residuals(theta)[0, 0])
    if return_error:
        return value, float(terms.quadrature_error(theta, terms.grid_shape)[0])
    return value


def contrast(cfg, window, tests, model, theta, quadrature=None) -> float:
    """U_Lambda = |Lambda|^-2 sum_k C_k^2."""
    if len(tests) < 1:
        raise ValueError("need at least one test function")
    theta = model.check(theta)
    r = gnz_terms(cfg, window, tests, model, quadrature).residuals(theta)[0]
    return float(np.sum(r ** 2) / window.volume() ** 2)


# --- reports ------------------------------------------------------------------


@dataclass
class ContrastReport:
    theta_hat: np.ndarray
    residuals: np.ndarray
    U_value: float
    converged: bool
    iterations: int
    window: Window
    method: str
    quadrature: Optional[dict] = None
    trace: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "theta_hat": [float(v) for v in self.theta_hat],
            "residuals": [float(v) for v in self.residuals],
            "U_value": float(self.U_value),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "quadrature": self.quadrature,
            "window": self.window.to_json(),
        }


# --- derivative-free simplex in a box -----------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    n_starts: int = 5
    seed: int = 0
    xtol: float = 1e-6
    max_iter: int = 400
    initial_step: float = 0.05


def fold_into_box(x, lo, hi):
    """Mirror coordinates at the bounds until they lie in [lo, hi]."""
    x = np.asarray(x, dtype=float).copy()
    w = hi - lo
    for i in range(len(x)):
        if w[i] == 0:
            x[i] = lo[i]
            continue
        t = (x[i] - lo[i]) % (2 * w[i])
        x[i] = lo[i] + (t if t <= w[i] else 2 * w[i] - t)
    return x


def nelder_mead_box(f, x0, box: Box, step, xtol=1e-6, max_iter=400):
    """Nelder-Mead with trial points reflected back into the box.

    Stops when every vertex is within ``xtol`` of the best one.  Returns
    (x_best, f_best, iterations, converged).
    """
    lo, hi = np.asarray(box.lower), np.asarray(box.upper)
    n = len(x0)
    simplex = [fold_into_box(x0, lo, hi)]
    for i in range(n):
        v = simplex[0].copy()
        v[i] += step[i] if v[i] + step[i] <= hi[i] else -step[i]
        simplex.append(fold_into_box(v, lo, hi))
    simplex = np.array(simplex)
    fs = np.array([f(v) for v in simplex])
    it = 0
    while it < max_iter:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        if np.max(np.linalg.norm(simplex[1:] - simplex[0], axis=1)) < xtol:
            return simplex[0], fs[0], it, True
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        xr = fold_into_box(centroid + (centroid - simplex[-1]), lo, hi)
        fr = f(xr)
        if fr < fs[0]:
            xe = fold_into_box(centroid + 2 * (centroid - simplex[-1]), lo, hi)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fs[-1] = xe, fe
            else:
                simplex[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = f(xc)
            if fc < min(fr, fs[-1]):
                simplex[-1], fs[-1] = xc, fc
            else:
                simplex[1:] = simplex[0] + 0.5 * (simplex[1:] - simplex[0])
                fs[1:] = [f(v) for v in simplex[1:]]
    order = np.argsort(fs, kind="stable")
    return simplex[order[0]], fs[order[0]], it, False


def fit_tf(cfg, window, tests, model, box: Optional[Box] = None, optimizer: OptimizerConfig = OptimizerConfig(),
           quadrature: Optional[QuadratureScheme] = None, starts=None, strict: bool = False) -> ContrastReport:
    """Takacs-Fiksel estimate: argmin over the box of U_Lambda.

    Multi-start simplex search (box centre plus random starts unless
    ``starts`` is given); the smallest contrast wins, ties to the first start.
    """
    box = box or model.box
    if len(tests) < model.p:
        raise ValueError(f"need K >= p test functions (K={len(tests)}, p={model.p})")
    if len(tests) == model.p:
        warnings.warn("K = p: identifiability of the contrast is not guaranteed", stacklevel=2)
    quadrature = quadrature or QuadratureScheme()
    terms = gnz_terms(cfg, window, tests, model, quadrature)
    vol2 = window.volume() ** 2

    def U(theta):
        r = terms.residuals(theta)[0]
        return float(np.dot(r, r) / vol2)

    if starts is None:
        rng = make_rng(optimizer.seed)
        starts = [box.center()] + [box.sample(rng) for _ in range(optimizer.n_starts - 1)]
    step = optimizer.initial_step * box.widths()
    best = None
    total_iter = 0
    for s in starts:
        x, fx, it, ok = nelder_mead_box(U, np.asarray(s, dtype=float), box, step, optimizer.xtol, optimizer.max_iter)
        total_iter += it
        if best is None or fx < best[1]:
            best = (x, fx, it, ok)
    x, fx, it, ok = best
    if not ok:
        log.warning("simplex search did not converge in %d iterations", optimizer.max_iter)
        if strict:
            raise NotConverged(f"best point {x}, U={fx}")
    return ContrastReport(
        theta_hat=x, residuals=terms.residuals(x)[0], U_value=fx, converged=ok, iterations=total_iter,
        window=window, method="tf", quadrature=quadrature.to_json(),
        trace={"tests": [h.label for h in terms.tests], "n_starts": len(starts)},
    )


# --- maximum pseudo-likelihood ------------------------------------------------


def fit_mple(cfg, window, model, box: Optional[Box] = None, quadrature: Optional[QuadratureScheme] = None,
             max_iter: int = 100, tol: float = 1e-12, strict: bool = False) -> ContrastReport:
    """Maximise the discretised log pseudo-likelihood by damped, projected
    Newton steps (the objective is concave for exponential families)."""
    box = box or model.box
    quadrature = quadrature or QuadratureScheme()
    check_collar(cfg, window, model.D)
    inside = np.flatnonzero(cfg.in_window(window))
    xy, w, _ = quadrature.points(window, len(inside))
    Vd = model.statistics(xy, cfg)
    Vx = model.statistics(cfg.xy[inside], cfg, exclude=inside)
    Vd, inv = np.unique(Vd, axis=0, return_inverse=True)
    w = np.bincount(inv.reshape(-1), weights=w, minlength=Vd.shape[0])
    sx = Vx.sum(axis=0)
    lo, hi = np.asarray(box.lower), np.asarray(box.upper)

    def lpl(t):
        return -float(np.dot(w, np.exp(-(Vd @ t)))) - float(np.dot(t, sx))

    def grad_hess(t):
        e = w * np.exp(-(Vd @ t))
        return Vd.T @ e - sx, -(Vd * e[:, None]).T @ Vd

    n = max(len(inside), 1)
    theta = np.zeros(model.p)
    theta[0] = -math.log(n / window.volume())
    theta = box.clip(theta)
    f = lpl(theta)
    max_eig = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, H = grad_hess(theta)
        max_eig = max(max_eig, float(np.linalg.eigvalsh(H).max()))
        # coordinates pinned at a bound whose gradient pushes outward stay fixed
        free = ~(((theta <= lo) & (g < 0)) | ((theta >= hi) & (g > 0)))
        step = np.zeros(model.p)
        if free.any():
            Hf = H[np.ix_(free, free)]
            try:
                step[free] = -np.linalg.solve(Hf, g[free])
            except np.linalg.LinAlgError:
                step[free] = -np.linalg.lstsq(Hf, g[free], rcond=None)[0]
        t = 1.0
        while True:
            cand = np.clip(theta + t * step, lo, hi)
            fc = lpl(cand)
            if fc >= f - 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        moved = np.max(np.abs(cand - theta))
        theta, f = cand, fc
        if moved < tol * max(1.0, np.max(np.abs(theta))):
            converged = True
            break
    if not converged and strict:
        raise NotConverged(f"MPLE Newton stopped at {theta}")
    terms_res, _ = grad_hess(theta)
    return ContrastReport(
        theta_hat=theta, residuals=terms_res, U_value=float(np.dot(terms_res, terms_res) / window.volume() ** 2),
        converged=converged, iterations=it, window=window, method="mple", quadrature=quadrature.to_json(),
        trace={"lpl": f, "max_hessian_eigenvalue": max_eig},
    )


# --- explicit Strauss estimator -------------------------------------------------


def _neighbour_counts(cfg: Configuration, window: Window, R: float) -> np.ndarray:
    inside = np.flatnonzero(cfg.in_window(window))
    if len(cfg) == 0 or len(inside) == 0:
        return np.zeros(0, dtype=np.int64)
    return cfg.index(R).counts(cfg.xy[inside], [R], inside)[:, 0]


def count_Nk(cfg: Configuration, window: Window, R: float, k: int) -> int:
    """Number of data points in the window with exactly k other points
    within distance R (neighbours looked up in the whole carrier)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return int(np.sum(_neighbour_counts(cfg, window, R) == k))


def coverage_counts(cfg: Configuration, window: Window, R: float, resolution: int = 512):
    """|B(y, R) intersected with phi| on a midpoint grid over the window with
    ``resolution`` cells per unit length.  Returns (counts, cell_area)."""
    if resolution < 64:
        raise ValueError("resolution must be >= 64")
    if window.d != 2:
        raise ValueError("planar windows only")
    nxg, nyg = grid_shape_for_spacing(window, 1.0 / resolution)
    hx, hy = window.sides[0] / nxg, window.sides[1] / nyg
    if len(cfg) == 0:
        return np.zeros((nxg, nyg), dtype=np.int32), hx * hy
    idx = cfg.index(R)
    counts = _kernels.coverage_grid(window.lower[0], window.lower[1], hx, hy, nxg, nyg, float(R), *idx._grid_args())
    return counts, hx * hy


def volume_Vk(cfg: Configuration, window: Window, R: float, k: int, resolution: int = 512) -> float:
    """Area of {y in window : exactly k data points within R of y}."""
    counts, _ = coverage_counts(cfg, window, R, resolution)
    return float(np.count_nonzero(counts == k)) / counts.size * window.volume()


def explicit_strauss_parts(cfg, window, R, resolution=512):
    counts, cell = coverage_counts(cfg, window, R, resolution)
    vol = window.volume()
    V0 = float(np.count_nonzero(counts == 0)) / counts.size * vol
    V1 = float(np.count_nonzero(counts == 1)) / counts.size * vol
    nb = _neighbour_counts(cfg, window, R)
    N0, N1 = int(np.sum(nb == 0)), int(np.sum(nb == 1))
    return N0, N1, V0, V1, math.sqrt(cell)


def fit_strauss_explicit(cfg, window, R: float, resolution: int = 512) -> ContrastReport:
    """Closed-form root of the residuals of the two Strauss indicator test
    functions: theta1 = ln(V0/N0), theta2 = ln(V1/N1) - ln(V0/N0)."""
    check_collar(cfg, window, R)
    N0, N1, V0, V1, spacing = explicit_strauss_parts(cfg, window, R, resolution)
    bad = [name for name, v in (("N0", N0), ("N1", N1), ("V0", V0), ("V1", V1)) if v <= 0]
    if bad:
        raise DegenerateCounts(f"explicit Strauss estimator undefined: {', '.join(bad)} = 0")
    t1 = math.log(V0 / N0)
    t2 = math.log(V1 / N1) - t1
    theta = np.array([t1, t2])
    res = np.array([math.exp(-t1) * V0 - N0, math.exp(-t1) * V1 - math.exp(t2) * N1])
    return ContrastReport(
        theta_hat=theta, residuals=res, U_value=float(np.dot(res, res) / window.volume() ** 2),
        converged=True, iterations=0, window=window, method="explicit",
        quadrature={"kind": "grid", "resolution": resolution, "spacing": spacing},
        trace={"N0": N0, "N1": N1, "V0": V0, "V1": V1},
    )
