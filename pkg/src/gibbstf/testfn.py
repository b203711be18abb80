"""Test functions h(x, phi; theta) for the GNZ residuals.

Every test function splits into a theta-free part computed once per
evaluation point (:meth:`TestFunction.features`) and a cheap map
``values(features, V, theta)`` where ``V`` are the model's sufficient
statistics at the same points.  This is what lets the contrast be
re-evaluated quickly inside an optimiser.
"""
from __future__ import annotations

import math

import numpy as np

from . import _kernels
from .core import Configuration, _as_position, self_indices
from .models import AreaModel, GibbsModel, ModelMismatch, MultiStraussModel

ISO_TOL = 1e-9


class TestFunction:
    __test__ = False  # keep pytest from collecting this class

    label = "h"
    depends_on_theta = False
    fiksel_factor = False
    range = 0.0

    def bind(self, model: GibbsModel) -> "TestFunction":
        """Check that this function can be used with ``model``."""
        return self

    def features(self, model, queries, cfg: Configuration, exclude=None) -> np.ndarray:
        q = np.asarray(queries, dtype=float).reshape(-1, cfg.d)
        return np.zeros((q.shape[0], 0))

    def values(self, feats: np.ndarray, stats: np.ndarray, theta) -> np.ndarray:
        raise NotImplementedError

    def shortcut_integral(self, n_points: int):
        return None

    def __call__(self, x, cfg: Configuration, theta, model: GibbsModel) -> float:
        """h(x, phi; theta); a point of ``cfg`` at ``x`` is left out."""
        self.bind(model)
        pos = _as_position(x)[None, :]
        excl = [self_indices(cfg, pos[0])]
        stats = model.statistics(pos, cfg, exclude=excl)
        feats = self.features(model, pos, cfg, exclude=excl)
        return float(self.values(feats, stats, np.asarray(theta, dtype=float))[0])

    def scaled(self, c: float) -> "TestFunction":
        return Scaled(self, c)

    def to_json(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.label}>"


class Constant(TestFunction):
    def __init__(self, c: float = 1.0):
        self.c = float(c)
        self.label = "1" if self.c == 1.0 else f"const({self.c:g})"

    def values(self, feats, stats, theta):
        return np.full(stats.shape[0], self.c)

    def to_json(self):
        return {"type": "constant", "c": self.c}


class Count(TestFunction):
    """|phi intersected with B(x, r)| (closed ball)."""

    def __init__(self, r: float):
        if r <= 0:
            raise ValueError("r must be > 0")
        self.r = float(r)
        self.range = self.r
        self.label = f"count({self.r:g})"

    def features(self, model, queries, cfg, exclude=None):
        q = np.asarray(queries, dtype=float).reshape(-1, cfg.d)
        if len(cfg) == 0:
            return np.zeros((q.shape[0], 1))
        return cfg.index(self.r).counts(q, [self.r], exclude).astype(float)

    def values(self, feats, stats, theta):
        return feats[:, 0]

    def to_json(self):
        return {"type": "count", "r": self.r}


class Fiksel(TestFunction):
    """h(x) = base(x) * exp(<theta, V(x|phi)>)."""

    depends_on_theta = True
    fiksel_factor = True

    def __init__(self, base: TestFunction, label: str | None = None):
        if base.depends_on_theta:
            raise ValueError("the Fiksel factor expects a theta-free base function")
        self.base = base
        self.range = base.range
        self.label = label or f"{base.label}*exp(<theta,V>)"

    def bind(self, model):
        self.base.bind(model)
        return self

    def features(self, model, queries, cfg, exclude=None):
        return self.base.features(model, queries, cfg, exclude)

    def values(self, feats, stats, theta):
        return self.base.values(feats, stats, theta) * np.exp(stats @ theta)

    def shortcut_integral(self, n_points):
        # int_Lambda |phi_B(x,r)| dx ~ N_Lambda * pi r^2 in the plane
        if isinstance(self.base, Count):
            return n_points * math.pi * self.base.r ** 2
        return None

    def to_json(self):
        if isinstance(self.base, Count):
            return {"type": "fiksel", "r": self.base.r}
        return {"type": "exp_energy", "base": self.base.to_json()}


class StraussIndicator(TestFunction):
    """exp((k-1) theta2) if x has exactly k-1 R-neighbours, else 0."""

    depends_on_theta = True

    def __init__(self, k: int):
        if int(k) != k or k < 1:
            raise ValueError("k must be a positive integer")
        self.k = int(k)
        self.label = f"strauss_indicator({self.k})"
        self.R = None

    def bind(self, model):
        if not isinstance(model, MultiStraussModel) or model.p != 2:
            raise ModelMismatch(f"{self.label} needs a Strauss model, got {type(model).__name__}")
        self.R = model.radii[0]
        self.range = self.R
        return self

    def values(self, feats, stats, theta):
        hit = stats[:, 1] == self.k - 1
        return np.where(hit, math.exp((self.k - 1) * theta[1]), 0.0)

    def to_json(self):
        return {"type": "strauss_indicator", "k": self.k}


class GradV(TestFunction):
    """i-th sufficient statistic V_i(x|phi) (= dV/dtheta_i)."""

    def __init__(self, i: int):
        self.i = int(i)
        self.label = f"gradV[{self.i}]"

    def bind(self, model):
        if not 0 <= self.i < model.p:
            raise ModelMismatch(f"{self.label} out of range for p={model.p}")
        self.range = model.D
        return self

    def values(self, feats, stats, theta):
        return stats[:, self.i]

    def to_json(self):
        return {"type": "gradV", "i": self.i}


class _ArcFunction(TestFunction):
    def __init__(self, R: float):
        if R <= 0:
            raise ValueError("R must be > 0")
        self.R = float(R)
        self.range = 2 * self.R

    def bind(self, model):
        if not isinstance(model, AreaModel) or not math.isclose(model.R, self.R):
            raise ModelMismatch(f"{self.label} needs an area model with R={self.R:g}")
        return self

    def features(self, model, queries, cfg, exclude=None):
        q = np.ascontiguousarray(np.asarray(queries, dtype=float).reshape(-1, 2))
        if len(cfg) == 0:
            return np.full((q.shape[0], 1), 2 * math.pi)
        idx = cfg.index(2 * self.R)
        excl = np.full(q.shape[0], -1, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)
        arc = _kernels.uncovered_arc(
            np.ascontiguousarray(q[:, 0]), np.ascontiguousarray(q[:, 1]), self.R, excl, *idx._grid_args()
        )
        return arc[:, None]


class Perimeter(_ArcFunction):
    """Length of the circle C(x, R) outside every other disc."""

    def __init__(self, R):
        super().__init__(R)
        self.label = f"per({self.R:g})"

    def values(self, feats, stats, theta):
        return self.R * feats[:, 0]

    def to_json(self):
        return {"type": "per", "R": self.R}


class Isolated(_ArcFunction):
    """1 if the ball B(x, R) meets no other ball (tangency counts as isolated)."""

    def __init__(self, R):
        super().__init__(R)
        self.label = f"iso({self.R:g})"

    def values(self, feats, stats, theta):
        return (self.R * feats[:, 0] >= 2 * math.pi * self.R - ISO_TOL).astype(float)

    def to_json(self):
        return {"type": "iso", "R": self.R}


class Scaled(TestFunction):
    def __init__(self, base: TestFunction, c: float):
        self.base = base
        self.c = float(c)
        self.depends_on_theta = base.depends_on_theta
        self.fiksel_factor = base.fiksel_factor
        self.range = base.range
        self.label = f"{self.c:g}*{base.label}"

    def bind(self, model):
        self.base.bind(model)
        self.range = self.base.range
        return self

    def features(self, model, queries, cfg, exclude=None):
        return self.base.features(model, queries, cfg, exclude)

    def values(self, feats, stats, theta):
        return self.c * self.base.values(feats, stats, theta)

    def shortcut_integral(self, n_points):
        s = self.base.shortcut_integral(n_points)
        return None if s is None else self.c * s

    def to_json(self):
        return {"type": "scaled", "c": self.c, "base": self.base.to_json()}


# --- constructors -----------------------------------------------------------


def h_count(r: float) -> TestFunction:
    return Count(r)


def h_fiksel(r: float) -> TestFunction:
    return Fiksel(Count(r), label=f"fiksel({r:g})")


def h_strauss_indicator(k: int) -> TestFunction:
    return StraussIndicator(k)


def h_gradV(model: GibbsModel) -> list:
    return [GradV(i).bind(model) for i in range(model.p)]


def h_per(R: float) -> TestFunction:
    return Perimeter(R)


def h_iso(R: float) -> TestFunction:
    return Isolated(R)


def h_exp_energy() -> TestFunction:
    """exp(<theta, V>), the second member of the non-identifiable pair."""
    return Fiksel(Constant(1.0), label="exp(<theta,V>)")


def from_json(specs, model: GibbsModel) -> list:
    """Build and bind test functions from config entries such as
    ``{"type": "count", "r": 0.05}``; ``gradV`` without ``i`` expands to all p."""
    out = []
    for s in specs:
        kind = s["type"]
        if kind == "count":
            out.append(Count(s["r"]))
        elif kind == "fiksel":
            out.append(h_fiksel(s["r"]))
        elif kind == "strauss_indicator":
            out.append(StraussIndicator(s["k"]))
        elif kind == "gradV":
            if "i" in s:
                out.append(GradV(s["i"]))
            else:
                out.extend(h_gradV(model))
        elif kind == "constant":
            out.append(Constant(s.get("c", 1.0)))
        elif kind == "exp_energy":
            base = from_json([s["base"]], model)[0] if "base" in s else Constant(1.0)
            out.append(Fiksel(base))
        elif kind == "per":
            out.append(Perimeter(s.get("R", getattr(model, "R", None))))
        elif kind == "iso":
            out.append(Isolated(s.get("R", getattr(model, "R", None))))
        elif kind == "scaled":
            out.append(Scaled(from_json([s["base"]], model)[0], s["c"]))
        else:
            raise ValueError(f"unknown test function type {kind!r}")
    for h in out:
        h.bind(model)
    return out
