"""Windows, point configurations and fixed-radius neighbour queries."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels


class EmptyWindow(ValueError):
    pass


@dataclass(frozen=True)
class Window:
    """Axis-aligned box ``[lower, upper]``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not 1 <= len(lo) <= 3:
            raise ValueError("lower/upper must have the same length d in 1..3")
        if any(not h > l for l, h in zip(lo, hi)):
            raise EmptyWindow(f"degenerate window {lo} .. {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def square(cls, a: float, b: float, d: int = 2) -> "Window":
        return cls((a,) * d, (b,) * d)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    def volume(self) -> float:
        return float(np.prod(self.sides))

    def eroded(self, delta: float) -> "Window":
        return erode(self, delta)

    def dilated(self, delta: float) -> "Window":
        return Window(tuple(v - delta for v in self.lower), tuple(v + delta for v in self.upper))

    def contains(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return np.all((xy >= self.lower) & (xy <= self.upper), axis=1)

    def contains_window(self, other: "Window") -> bool:
        return all(a <= b for a, b in zip(self.lower, other.lower)) and all(
            a >= b for a, b in zip(self.upper, other.upper)
        )

    def midpoint_grid(self, shape: Sequence[int]) -> np.ndarray:
        """Cell centres of a regular grid with ``shape[i]`` cells along axis i."""
        axes = [
            lo + (np.arange(n) + 0.5) * ((hi - lo) / n)
            for lo, hi, n in zip(self.lower, self.upper, shape)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_json(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


def erode(window: Window, delta: float) -> Window:
    """Shrink every side of ``window`` by ``delta`` at both ends."""
    if delta < 0:
        raise ValueError("erosion margin must be nonnegative")
    if delta == 0:
        return window
    if np.any(2 * delta >= window.sides):
        raise EmptyWindow(f"eroding {window} by {delta} leaves nothing")
    return Window(tuple(v + delta for v in window.lower), tuple(v - delta for v in window.upper))


class MarkedPoint(NamedTuple):
    position: tuple
    mark: Optional[float] = None


def _as_position(x) -> np.ndarray:
    if isinstance(x, MarkedPoint):
        x = x.position
    return np.asarray(x, dtype=float)


class Configuration:
    """Finite simple point pattern living on a carrier window.

    Positions are stored as a read-only (n, d) array.  Marks are optional
    and, when given, strictly positive.
    """

    def __init__(self, xy, carrier: Window, marks=None, check: bool = True):
        xy = np.asarray(xy, dtype=float).reshape(-1, carrier.d)
        xy = np.ascontiguousarray(xy)
        if marks is not None:
            marks = np.asarray(marks, dtype=float).reshape(-1)
            if marks.shape[0] != xy.shape[0]:
                raise ValueError("one mark per point required")
            if np.any(marks <= 0):
                raise ValueError("marks must be > 0")
            marks.setflags(write=False)
        if check and len(xy):
            if not np.all(carrier.contains(xy)):
                raise ValueError("configuration has points outside its carrier")
            if np.unique(xy, axis=0).shape[0] != xy.shape[0]:
                raise ValueError("duplicate positions in configuration")
        xy.setflags(write=False)
        self.xy = xy
        self.marks = marks
        self.carrier = carrier
        self._index = {}

    def __len__(self):
        return self.xy.shape[0]

    def __repr__(self):
        return f"Configuration(n={len(self)}, carrier={self.carrier})"

    @property
    def d(self) -> int:
        return self.carrier.d

    def points(self) -> list:
        marks = self.marks if self.marks is not None else [None] * len(self)
        return [MarkedPoint(tuple(p), m) for p, m in zip(self.xy, marks)]

    def in_window(self, window: Window) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0, dtype=bool)
        return window.contains(self.xy)

    def restrict(self, window: Window, carrier: Optional[Window] = None) -> "Configuration":
        """Points with position in ``window``; the carrier becomes ``window``
        unless another one is given."""
        keep = self.in_window(window)
        marks = None if self.marks is None else self.marks[keep]
        return Configuration(self.xy[keep], carrier or window, marks, check=False)

    def translated(self, t) -> "Configuration":
        t = np.asarray(t, dtype=float)
        carrier = Window(tuple(np.add(self.carrier.lower, t)), tuple(np.add(self.carrier.upper, t)))
        return Configuration(self.xy + t, carrier, self.marks, check=False)

    def without(self, i) -> "Configuration":
        keep = np.ones(len(self), dtype=bool)
        keep[i] = False
        marks = None if self.marks is None else self.marks[keep]
        return Configuration(self.xy[keep], self.carrier, marks, check=False)

    def with_points(self, xy) -> "Configuration":
        xy = np.vstack([self.xy, np.asarray(xy, dtype=float).reshape(-1, self.d)])
        return Configuration(xy, self.carrier)

    def index(self, radius: float) -> "NeighborIndex":
        """Cached neighbour index tuned for queries up to ``radius``."""
        cell = max(radius, float(self.carrier.sides.max()) / 64)
        key = round(cell, 12)
        idx = self._index.get(key)
        if idx is None:
            idx = NeighborIndex(self.xy, self.carrier, radius)
            self._index[key] = idx
        return idx


class NeighborIndex:
    """Uniform cell grid over the carrier with CSR point lists.

    Cell side is ``max(radius, longest carrier side / 64)``, so a query of
    radius <= ``radius`` only inspects the 3 x 3 block around its cell.
    Planar only; other dimensions fall back to a linear scan.
    """

    def __init__(self, xy, carrier: Window, radius: float):
        if radius <= 0:
            raise ValueError("radius must be > 0")
        self.xy = np.ascontiguousarray(np.asarray(xy, dtype=float).reshape(-1, carrier.d))
        self.carrier = carrier
        self.radius = float(radius)
        self.n = self.xy.shape[0]
        if carrier.d != 2:
            return
        target = max(self.radius, float(carrier.sides.max()) / 64)
        sides = carrier.sides
        # equal square cells; the last row/column may be partially outside
        self.cell = target
        self.shape = tuple(max(1, int(math.ceil(s / target))) for s in sides)
        nx, ny = self.shape
        if self.n:
            cx = np.clip(((self.xy[:, 0] - carrier.lower[0]) / self.cell).astype(np.int64), 0, nx - 1)
            cy = np.clip(((self.xy[:, 1] - carrier.lower[1]) / self.cell).astype(np.int64), 0, ny - 1)
            cid = cx * ny + cy
        else:
            cid = np.zeros(0, dtype=np.int64)
        self.order = np.argsort(cid, kind="stable").astype(np.int64)
        self.starts = np.searchsorted(cid[self.order], np.arange(nx * ny + 1)).astype(np.int64)
        self.px = np.ascontiguousarray(self.xy[:, 0])
        self.py = np.ascontiguousarray(self.xy[:, 1])

    def _grid_args(self):
        return (
            self.px, self.py, self.order, self.starts,
            self.carrier.lower[0], self.carrier.lower[1], self.cell, self.shape[0], self.shape[1],
        )

    def counts(self, queries, radii, exclude=None) -> np.ndarray:
        """Closed-ball counts, shape (m, len(radii)); ``exclude[i]`` is the
        index of a point ignored for query i (-1 for none)."""
        q = np.ascontiguousarray(np.asarray(queries, dtype=float).reshape(-1, self.carrier.d))
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        m = q.shape[0]
        excl = np.full(m, -1, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)
        if self.carrier.d != 2:
            d2 = ((q[:, None, :] - self.xy[None, :, :]) ** 2).sum(-1)
            if self.n:
                d2[np.arange(m)[excl >= 0], excl[excl >= 0]] = np.inf
            return (d2[:, :, None] <= radii[None, None, :] ** 2).sum(1)
        return _kernels.count_within(
            np.ascontiguousarray(q[:, 0]), np.ascontiguousarray(q[:, 1]), radii, excl, *self._grid_args()
        )

    def neighbors(self, x, r: float, exclude: int = -1) -> np.ndarray:
        """Indices of points y with ||y - x|| <= r, skipping ``exclude``."""
        x = _as_position(x)
        if self.carrier.d != 2:
            d2 = ((self.xy - x) ** 2).sum(1)
            hit = d2 <= r * r
            if exclude >= 0:
                hit[exclude] = False
            return np.flatnonzero(hit)
        return np.sort(_kernels.neighbours_of(float(x[0]), float(x[1]), float(r), int(exclude), *self._grid_args()))


def self_indices(cfg: Configuration, x) -> int:
    """Index of the point of ``cfg`` sitting exactly at ``x`` (or -1)."""
    if len(cfg) == 0:
        return -1
    hit = np.flatnonzero(np.all(cfg.xy == _as_position(x), axis=1))
    return int(hit[0]) if len(hit) else -1


def count_in_ball(cfg: Configuration, x, r: float, exclude=None) -> int:
    """Number of points of ``cfg`` in the closed ball B(x, r), ``exclude``
    (a point of ``cfg``) left out."""
    if r <= 0:
        raise ValueError("radius must be > 0")
    if len(cfg) == 0:
        return 0
    excl = -1 if exclude is None else self_indices(cfg, exclude)
    return int(cfg.index(r).counts(_as_position(x)[None, :], [r], [excl])[0, 0])


# --- point-pattern files ----------------------------------------------------


def write_pattern(cfg: Configuration, path) -> Path:
    """CSV ``x,y[,mark]`` plus a ``<stem>.json`` window sidecar."""
    path = Path(path)
    names = ["x", "y", "z"][: cfg.d] + (["mark"] if cfg.marks is not None else [])
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names)
        for i, p in enumerate(cfg.xy):
            row = [repr(float(v)) for v in p]
            if cfg.marks is not None:
                row.append(repr(float(cfg.marks[i])))
            w.writerow(row)
    path.with_suffix(".json").write_text(json.dumps(cfg.carrier.to_json()))
    return path


def read_pattern(path, window_path=None) -> Configuration:
    path = Path(path)
    window_path = Path(window_path) if window_path else path.with_suffix(".json")
    desc = json.loads(window_path.read_text())
    carrier = Window(desc["lower"], desc["upper"])
    with path.open(newline="") as f:
        rows = list(csv.DictReader(f))
    axes = ["x", "y", "z"][: carrier.d]
    xy = np.array([[float(r[a]) for a in axes] for r in rows], dtype=float).reshape(-1, carrier.d)
    marks = None
    if rows and "mark" in rows[0] and rows[0]["mark"] not in (None, ""):
        marks = np.array([float(r["mark"]) for r in rows])
    return Configuration(xy, carrier, marks)
