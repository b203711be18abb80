"""Exponential-family Gibbs models with finite range.

The local energy of inserting ``x`` into ``phi`` is ``<theta, V(x|phi)>``
where ``V`` is the vector of sufficient statistics returned by
:meth:`GibbsModel.statistics`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .core import Configuration, _as_position, self_indices


class ModelMismatch(TypeError):
    pass


@dataclass(frozen=True)
class Box:
    """Compact parameter space, one closed interval per coordinate."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("bounds of different length")
        if not all(np.isfinite(lo + hi)) or any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"box must be finite and nonempty, got {lo} .. {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs) -> "Box":
        return cls([a for a, _ in pairs], [b for _, b in pairs])

    @property
    def p(self) -> int:
        return len(self.lower)

    def contains(self, theta) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t >= self.lower) and np.all(t <= self.upper))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def widths(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    def sample(self, rng, size=None) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=None if size is None else (size, self.p))

    def to_json(self) -> dict:
        return {f"theta{i + 1}": [a, b] for i, (a, b) in enumerate(zip(self.lower, self.upper))}


class GibbsModel:
    """Base class.  Subclasses set ``p``, ``D``, ``names``, ``box`` and
    implement :meth:`statistics`."""

    p: int
    D: float
    names: tuple
    box: Box

    def statistics(self, queries, cfg: Configuration, exclude=None) -> np.ndarray:
        """Sufficient statistics V(q|phi) for every query row, shape (m, p).

        ``exclude[i]`` is the index of a point of ``cfg`` ignored for query i
        (used to evaluate V(x | phi minus x) at data points).
        """
        raise NotImplementedError

    def statistics_of_data(self, cfg: Configuration, which=None) -> np.ndarray:
        """V(x | phi minus x) at the points of ``cfg`` selected by ``which``."""
        idx = np.arange(len(cfg)) if which is None else np.asarray(which)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return self.statistics(cfg.xy[idx], cfg, exclude=idx)

    def sufficient_statistics(self, x, cfg: Configuration) -> np.ndarray:
        pos = _as_position(x)
        return self.statistics(pos[None, :], cfg, exclude=[self_indices(cfg, pos)])[0]

    def local_energy(self, theta, x, cfg: Configuration) -> float:
        return float(np.dot(np.asarray(theta, dtype=float), self.sufficient_statistics(x, cfg)))

    def papangelou(self, theta, x, cfg: Configuration) -> float:
        return math.exp(-self.local_energy(theta, x, cfg))

    def statistic_bounds(self) -> tuple:
        """Per-coordinate (lower, upper) range of V; ``inf`` when unbounded."""
        raise NotImplementedError

    def local_stability_bound(self, box: Box | None = None) -> float:
        """rho >= 0 with <theta, V> >= -rho for every theta in the box."""
        box = box or self.box
        lo_v, hi_v = self.statistic_bounds()
        total = 0.0
        for a, b, vl, vh in zip(box.lower, box.upper, lo_v, hi_v):
            cands = [a * vl, b * vl]
            if np.isfinite(vh):
                cands += [a * vh, b * vh]
            elif a < 0:
                raise ValueError("unbounded statistic with a negative parameter: not locally stable")
            total += min(cands)
        return max(0.0, -total)

    def isolated_statistics(self) -> np.ndarray:
        """V(x | empty configuration)."""
        raise NotImplementedError

    def check(self, theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float).reshape(-1)
        if t.shape[0] != self.p:
            raise ValueError(f"{type(self).__name__} expects {self.p} parameters, got {t.shape[0]}")
        if not self.box.contains(t):
            raise ValueError(f"theta {t} outside the parameter box {self.box}")
        return t

    def to_json(self) -> dict:
        raise NotImplementedError


class PoissonModel(GibbsModel):
    """Homogeneous Poisson process, V = (1,), intensity exp(-theta1)."""

    p = 1
    D = 0.0
    names = ("theta1",)

    def __init__(self, box: Box | None = None):
        self.box = box or Box([-10.0], [10.0])

    def statistics(self, queries, cfg, exclude=None):
        q = np.asarray(queries, dtype=float).reshape(-1, cfg.d)
        return np.ones((q.shape[0], 1))

    def statistic_bounds(self):
        return (1.0,), (1.0,)

    def isolated_statistics(self):
        return np.ones(1)

    def to_json(self):
        return {"model": "poisson", "box": self.box.to_json()}


class MultiStraussModel(GibbsModel):
    """V(x|phi) = (1, n_{R_1}(x, phi), ..., n_{R_q}(x, phi)) with nested
    closed-ball counts and radii R_1 < ... < R_q."""

    def __init__(self, radii: Sequence[float], box: Box | None = None):
        radii = tuple(float(r) for r in radii)
        if not radii or any(r <= 0 for r in radii) or list(radii) != sorted(set(radii)):
            raise ValueError("radii must be positive and strictly increasing")
        self.radii = radii
        self.p = 1 + len(radii)
        self.D = radii[-1]
        self.names = ("theta1",) + tuple(f"theta{i + 2}" for i in range(len(radii)))
        self.box = box or Box([-10.0] + [0.0] * len(radii), [10.0] + [5.0] * len(radii))
        if self.box.p != self.p:
            raise ValueError("box dimension does not match the model")
        if any(v < 0 for v in self.box.lower[1:]):
            raise ValueError("interaction parameters must be >= 0 (repulsive regime)")

    def statistics(self, queries, cfg, exclude=None):
        q = np.asarray(queries, dtype=float).reshape(-1, cfg.d)
        out = np.ones((q.shape[0], self.p))
        if len(cfg) and q.shape[0]:
            out[:, 1:] = cfg.index(self.D).counts(q, self.radii, exclude)
        else:
            out[:, 1:] = 0.0
        return out

    def statistic_bounds(self):
        return (1.0,) + (0.0,) * (self.p - 1), (1.0,) + (np.inf,) * (self.p - 1)

    def isolated_statistics(self):
        v = np.zeros(self.p)
        v[0] = 1.0
        return v

    def to_json(self):
        return {"model": "multistrauss", "radii": list(self.radii), "box": self.box.to_json()}


class StraussModel(MultiStraussModel):
    """Strauss process: local energy theta1 + theta2 * n_R(x, phi)."""

    def __init__(self, R: float, box: Box | None = None):
        super().__init__([R], box)
        self.R = float(R)

    def to_json(self):
        return {"model": "strauss", "R": self.R, "box": self.box.to_json()}


def uncovered_area(x, R: float, cfg: Configuration, resolution: int = 128, return_error: bool = False):
    """Area of B(x, R) not covered by the discs B(y, R), y in ``cfg``.

    Computed as pi R^2 minus the covered part, the latter by a midpoint rule
    on a ``resolution`` x ``resolution`` grid over the disc's bounding box.
    With ``return_error`` also returns a bound on the quadrature error.
    """
    pos = _as_position(x)
    area = AreaModel(R, resolution=resolution).statistics(pos[None, :], cfg)[0, 1]
    if not return_error:
        return area
    k = 0 if len(cfg) == 0 else int(cfg.index(2 * R).counts(pos[None, :], [2 * R])[0, 0])
    h = 2 * R / resolution
    return area, math.sqrt(2) * h * 2 * math.pi * R * (1 + k)


class AreaModel(GibbsModel):
    """Area-interaction process with fixed radius R:
    V(x|phi) = (1, uncovered area of B(x, R)).  Range D = 2R."""

    p = 2
    names = ("theta1", "theta2")

    def __init__(self, R: float, box: Box | None = None, resolution: int = 128):
        if R <= 0:
            raise ValueError("R must be > 0")
        self.R = float(R)
        self.D = 2.0 * self.R
        self.resolution = int(resolution)
        scale = 10.0 / (math.pi * R * R)
        self.box = box or Box([-10.0, -scale], [10.0, scale])

    def statistics(self, queries, cfg, exclude=None):
        q = np.ascontiguousarray(np.asarray(queries, dtype=float).reshape(-1, 2))
        out = np.ones((q.shape[0], 2))
        full = math.pi * self.R ** 2
        if len(cfg) == 0 or q.shape[0] == 0:
            out[:, 1] = full
            return out
        idx = cfg.index(self.D)
        excl = np.full(q.shape[0], -1, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)
        cov = _kernels.covered_area(
            np.ascontiguousarray(q[:, 0]), np.ascontiguousarray(q[:, 1]), self.R, self.resolution, excl,
            *idx._grid_args(),
        )
        # covered fraction of the rastered disc, so that 0 <= A <= pi R^2
        out[:, 1] = full * np.clip(1.0 - cov / self._disc_cells_area, 0.0, 1.0)
        return out

    @property
    def _disc_cells_area(self) -> float:
        h = 2.0 * self.R / self.resolution
        u = -self.R + (np.arange(self.resolution) + 0.5) * h
        return float(np.count_nonzero(u[:, None] ** 2 + u[None, :] ** 2 <= self.R ** 2)) * h * h

    def statistic_bounds(self):
        return (1.0, 0.0), (1.0, math.pi * self.R ** 2)

    def isolated_statistics(self):
        return np.array([1.0, math.pi * self.R ** 2])

    def to_json(self):
        return {"model": "area", "R": self.R, "box": self.box.to_json()}


def model_from_json(desc: dict) -> GibbsModel:
    kind = desc.get("model", desc.get("type"))
    box = None
    if "box" in desc:
        b = desc["box"]
        keys = sorted(b, key=lambda k: int(k.replace("theta", "")))
        box = Box.from_pairs([b[k] for k in keys])
    if kind == "strauss":
        return StraussModel(desc["R"], box)
    if kind == "multistrauss":
        return MultiStraussModel(desc["radii"], box)
    if kind == "area":
        return AreaModel(desc["R"], box, desc.get("resolution", 128))
    if kind == "poisson":
        return PoissonModel(box)
    raise ValueError(f"unknown model {kind!r}")


def beta_gamma(theta) -> tuple:
    """(beta, gamma) = (exp(-theta1), exp(-theta2)) for the Strauss model."""
    return math.exp(-theta[0]), math.exp(-theta[1])


def theta_from_beta_gamma(beta: float, gamma: float) -> np.ndarray:
    return np.array([-math.log(beta), -math.log(gamma)])
