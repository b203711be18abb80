"""Poisson and birth-death Metropolis-Hastings samplers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import Configuration, Window
from .models import GibbsModel, MultiStraussModel, PoissonModel


class NonFinite(FloatingPointError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Birth-death chain settings.

    The chain runs ``burn_in + steps_per_point * E`` steps, ``E`` being the
    expected count of the Poisson process with the isolated-point intensity
    on the window.  ``max_points`` truncates the state space (births above
    it are rejected).
    """

    seed: int = 0
    burn_in: int = 10_000
    steps_per_point: float = 200.0
    birth_probability: float = 0.5
    max_points: Optional[int] = None

    def __post_init__(self):
        if self.burn_in < 0 or self.steps_per_point < 1:
            raise ValueError("burn_in >= 0 and steps_per_point >= 1 required")
        if not 0 < self.birth_probability < 1:
            raise ValueError("birth_probability must lie in (0, 1)")

    def with_seed(self, seed: int) -> "SamplerConfig":
        return SamplerConfig(seed, self.burn_in, self.steps_per_point, self.birth_probability, self.max_points)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample_poisson(window: Window, intensity: float, seed: int) -> Configuration:
    if intensity <= 0:
        raise ValueError("intensity must be > 0")
    rng = make_rng(seed)
    n = rng.poisson(intensity * window.volume())
    xy = rng.uniform(window.lower, window.upper, size=(n, window.d))
    return Configuration(xy, window)


def chain_length(model: GibbsModel, theta, window: Window, cfg: SamplerConfig) -> int:
    iso = float(np.dot(theta, model.isolated_statistics()))
    expected = max(1.0, window.volume() * math.exp(-iso))
    return int(cfg.burn_in + math.ceil(cfg.steps_per_point * expected))


def sample_gibbs(
    model: GibbsModel, theta, window: Window, cfg: SamplerConfig = SamplerConfig(), steps: Optional[int] = None
) -> Configuration:
    """Birth-death MH chain started from the empty pattern, free boundary.

    Birth: uniform location, accepted with probability
    min(1, |W| exp(-V(u|phi)) / (n + 1) * (1 - pb) / pb).  Death: uniform
    point, reciprocal ratio.  ``steps`` overrides the default chain length.
    """
    theta = model.check(theta)
    if window.d != 2:
        raise ValueError("sampler is planar")
    total = chain_length(model, theta, window, cfg) if steps is None else int(steps)
    if isinstance(model, MultiStraussModel):
        return _run_counting(model, theta, window, cfg, total)
    if isinstance(model, PoissonModel):
        return _run_counting(model, theta, window, cfg, total)
    return _run_generic(model, theta, window, cfg, total)


_CHUNK = 1 << 16


def count_trace(model: GibbsModel, theta, window: Window, cfg: SamplerConfig, steps: int, every: int = 1) -> np.ndarray:
    """Number of points after every ``every`` steps of the chain (counting
    models only); used to check the chain against its target law."""
    theta = model.check(theta)
    if not isinstance(model, (MultiStraussModel, PoissonModel)):
        raise TypeError("count_trace needs a counting-statistic model")
    trace = []
    _run_counting(model, theta, window, cfg, int(steps), trace=trace, every=int(every))
    return np.asarray(trace, dtype=np.int64)


def _run_counting(model, theta, window, cfg, total, trace=None, every=1):
    radii = np.asarray(getattr(model, "radii", (0.0,)), dtype=float)
    if isinstance(model, PoissonModel):
        # zero-radius count never fires (points are distinct), energy = theta1
        th = np.array([theta[0], 0.0])
        radii = np.array([1e-300])
    else:
        th = np.asarray(theta, dtype=float)
    lox, loy = window.lower
    wx, wy = window.sides
    rmax = float(radii[-1])
    cell = max(rmax, float(max(wx, wy)) / 64)
    nx, ny = int(math.ceil(wx / cell)), int(math.ceil(wy / cell))
    beta = math.exp(-th[0])
    mean = beta * wx * wy
    cap = int(mean + 10 * math.sqrt(mean) + 64)
    if cfg.max_points is not None:
        cap = min(cap, cfg.max_points + 1)
    max_points = cfg.max_points if cfg.max_points is not None else np.iinfo(np.int64).max
    cell_cap = int(beta * cell * cell * 4 + 16)

    px = np.empty(cap)
    py = np.empty(cap)
    pcell = np.empty(cap, dtype=np.int64)
    pslot = np.empty(cap, dtype=np.int64)
    items = np.empty((nx * ny, cell_cap), dtype=np.int64)
    counts = np.zeros(nx * ny, dtype=np.int64)
    n = 0

    rng = make_rng(cfg.seed)
    done = 0
    while done < total:
        u_all = rng.random((min(_CHUNK, total - done), 4))
        pieces = [u_all] if trace is None else [u_all[a:a + every] for a in range(0, len(u_all), every)]
        for u in pieces:
            start = 0
            while True:
                n, status, t = _kernels.mh_counting(
                    u, n, px, py, pcell, pslot, items, counts,
                    th, radii, lox, loy, wx, wy, lox, loy, cell, nx, ny,
                    cfg.birth_probability, max_points, start,
                )
                if status == 0:
                    break
                if status == 3:
                    raise NonFinite("local energy is not finite")
                if status == 1:
                    grown = np.empty((nx * ny, 2 * items.shape[1]), dtype=np.int64)
                    grown[:, : items.shape[1]] = items
                    items = grown
                elif status == 2:
                    new = 2 * px.shape[0]
                    px, py = np.resize(px, new), np.resize(py, new)
                    pcell, pslot = np.resize(pcell, new), np.resize(pslot, new)
                start = t
            if trace is not None:
                trace.append(n)
        done += u_all.shape[0]
    xy = np.column_stack([px[:n], py[:n]])
    return Configuration(xy, window, check=False)


def _run_generic(model, theta, window, cfg, total):
    """Pure-Python chain for models without a compiled kernel (slow)."""
    rng = make_rng(cfg.seed)
    vol = window.volume()
    pb = cfg.birth_probability
    q = (1 - pb) / pb
    cap = cfg.max_points if cfg.max_points is not None else np.inf
    pts = np.empty((0, 2))

    def energy(x, others):
        if len(others):
            near = np.sum((others - x) ** 2, axis=1) <= model.D ** 2
            others = others[near]
        sub = Configuration(others, window, check=False)
        e = float(np.dot(theta, model.statistics(x[None, :], sub)[0]))
        if not math.isfinite(e):
            raise NonFinite("local energy is not finite")
        return e

    done = 0
    while done < total:
        u = rng.random((min(_CHUNK, total - done), 4))
        for row in u:
            n = len(pts)
            if row[0] < pb:
                if n >= cap:
                    continue
                x = np.array(window.lower) + row[1:3] * window.sides
                ratio = vol * math.exp(-energy(x, pts)) / (n + 1) * q
                if row[3] < ratio:
                    pts = np.vstack([pts, x])
            elif n:
                i = min(int(row[1] * n), n - 1)
                others = np.delete(pts, i, axis=0)
                ratio = n / (vol * math.exp(-energy(pts[i], others))) / q
                if row[3] < ratio:
                    pts = others
        done += u.shape[0]
    return Configuration(pts, window, check=False)


def sample_replicates(model: GibbsModel, theta, window: Window, m: int, cfg: SamplerConfig = SamplerConfig(),
                      base_seed: int = 0) -> list:
    """``m`` independent patterns; replicate r uses seed ``base_seed + r``."""
    return [sample_gibbs(model, theta, window, cfg.with_seed(base_seed + r)) for r in range(m)]
