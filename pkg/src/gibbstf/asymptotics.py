"""Plug-in estimates of E(h, theta), Sigma(h, theta) and the sandwich
covariance of the Takacs-Fiksel estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Configuration, Window, erode
from .estimate import GNZTerms, QuadratureScheme, gnz_terms, reach_of

EIG_FLOOR = 1e-12
MAX_COND = 1e8


class TooFewBlocks(ValueError):
    pass


class SingularE(np.linalg.LinAlgError):
    pass


@dataclass
class CovarianceReport:
    E_hat: np.ndarray
    Sigma_hat: np.ndarray
    sandwich: np.ndarray
    S: np.ndarray
    D_block: float
    n_blocks: int
    n_interior: int

    def to_json(self) -> dict:
        return {
            "E_hat": self.E_hat.tolist(),
            "Sigma_hat": self.Sigma_hat.tolist(),
            "sandwich": self.sandwich.tolist(),
            "S": self.S.tolist(),
            "D_block": self.D_block,
            "n_blocks": self.n_blocks,
            "n_interior": self.n_interior,
        }


def estimate_E(cfg, window, tests, model, theta, quadrature: Optional[QuadratureScheme] = None) -> np.ndarray:
    """(p, K) matrix |Lambda|^-1 int_Lambda h_k V_i exp(-<theta, V>) dx."""
    theta = model.check(theta)
    terms = gnz_terms(cfg, window, tests, model, quadrature)
    return terms.sensitivity(theta) / window.volume()


@dataclass(frozen=True)
class BlockGrid:
    """Square blocks of side ``side`` centred in ``region``."""

    region: Window
    side: float
    shape: tuple

    @classmethod
    def tile(cls, region: Window, side: float) -> "BlockGrid":
        shape = tuple(int(math.floor(s / side + 1e-9)) for s in region.sides)
        if min(shape) < 1:
            raise TooFewBlocks(f"block side {side:g} exceeds {region}")
        used = np.array(shape) * side
        lo = np.asarray(region.lower) + (region.sides - used) / 2
        return cls(Window(tuple(lo), tuple(lo + used)), float(side), shape)

    @property
    def n_blocks(self) -> int:
        return int(np.prod(self.shape))

    def block_of(self, xy) -> np.ndarray:
        """Flat block index (C order) of each point, -1 outside the tiling."""
        xy = np.atleast_2d(xy)
        rel = (xy - np.asarray(self.region.lower)) / self.side
        ij = np.floor(rel).astype(np.int64)
        # points on the far edge belong to the last block
        for a, n in enumerate(self.shape):
            edge = np.isclose(rel[:, a], n)
            ij[edge, a] = n - 1
        inside = np.all((ij >= 0) & (ij < np.array(self.shape)), axis=1)
        flat = np.ravel_multi_index(np.clip(ij, 0, np.array(self.shape) - 1).T, self.shape)
        return np.where(inside, flat, -1)

    def interior(self) -> list:
        """Flat indices of blocks whose whole 3^d neighbourhood exists."""
        out = []
        for ij in np.ndindex(*self.shape):
            if all(1 <= i < n - 1 for i, n in zip(ij, self.shape)):
                out.append(int(np.ravel_multi_index(ij, self.shape)))
        return out

    def neighbourhood(self, b: int) -> list:
        ij = np.unravel_index(b, self.shape)
        out = []
        for off in np.ndindex(*(3,) * len(self.shape)):
            nb = tuple(int(i) + o - 1 for i, o in zip(ij, off))
            out.append(int(np.ravel_multi_index(nb, self.shape)))
        return out


def block_residuals(cfg, tests, model, theta, D_block: float, per_block: int = 16, region: Optional[Window] = None):
    """Per-block residual vectors on the carrier eroded by the interaction
    range.  Each block gets its own ``per_block``^d midpoint grid.
    Returns (grid, residuals of shape (n_blocks, K))."""
    tests = [h.bind(model) for h in tests]
    if D_block < model.D:
        raise ValueError(f"D_block={D_block:g} is below the range D={model.D:g}")
    region = region or erode(cfg.carrier, reach_of(model, tests))
    grid = BlockGrid.tile(region, D_block)
    dummy = grid.region.midpoint_grid(tuple(n * per_block for n in grid.shape))
    w = np.full(len(dummy), grid.side ** cfg.d / per_block ** cfg.d)
    dg = grid.block_of(dummy)
    data_block = grid.block_of(cfg.xy) if len(cfg) else np.zeros(0, dtype=np.int64)
    idx = np.flatnonzero(data_block >= 0)
    terms = GNZTerms(cfg, model, tests, dummy, w, idx, dg, data_block[idx], grid.n_blocks)
    return grid, terms.residuals(np.asarray(theta, dtype=float))


def estimate_Sigma(cfg: Configuration, tests, model, theta, D_block: Optional[float] = None,
                   per_block: int = 16, return_grid: bool = False):
    """Block estimate of Sigma:
    D^-d * mean over interior blocks l0 of sum_{|l - l0| <= 1} C_l0 C_l^T."""
    theta = model.check(theta)
    if D_block is None:
        D_block = max(model.D, float(cfg.carrier.sides.max()) / 10)
    grid, C = block_residuals(cfg, tests, model, theta, D_block, per_block)
    inner = grid.interior()
    if len(inner) < 9:
        raise TooFewBlocks(f"{len(inner)} interior blocks (need >= 9) with D_block={D_block:g}")
    K = C.shape[1]
    acc = np.zeros((K, K))
    for b in inner:
        nb = grid.neighbourhood(b)
        acc += np.outer(C[b], C[nb].sum(axis=0))
    Sigma = acc / len(inner) / grid.side ** cfg.d
    Sigma = 0.5 * (Sigma + Sigma.T)
    if return_grid:
        return Sigma, grid, len(inner)
    return Sigma


def sym_sqrt_inv(M: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    w = np.maximum(w, EIG_FLOOR)
    return (U / np.sqrt(w)) @ U.T


def sandwich_covariance(E: np.ndarray, Sigma: np.ndarray, volume: Optional[float] = None):
    """(E E^T)^-1 E Sigma E^T (E E^T)^-1 and the standardiser
    S = [E Sigma E^T]^-1/2 E E^T.  With ``volume`` the sandwich is divided
    by |Lambda|, giving the approximate covariance of theta_hat itself."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    EEt = E @ E.T
    cond = np.linalg.cond(EEt)
    if not np.isfinite(cond) or cond >= MAX_COND:
        raise SingularE(f"E E^T is singular or ill-conditioned (cond={cond:.3g})")
    inv = np.linalg.inv(EEt)
    M = E @ Sigma @ E.T
    sand = inv @ M @ inv
    sand = 0.5 * (sand + sand.T)
    S = sym_sqrt_inv(M) @ EEt
    if volume is not None:
        sand = sand / volume
    return sand, S


def covariance_report(cfg: Configuration, window: Window, tests, model, theta,
                      D_block: Optional[float] = None, quadrature: Optional[QuadratureScheme] = None,
                      per_block: int = 16) -> CovarianceReport:
    E = estimate_E(cfg, window, tests, model, theta, quadrature)
    Sigma, grid, n_in = estimate_Sigma(cfg, tests, model, theta, D_block, per_block, return_grid=True)
    sand, S = sandwich_covariance(E, Sigma)
    return CovarianceReport(E, Sigma, sand, S, grid.side, grid.n_blocks, n_in)


def pooled_sandwich(patterns: Sequence[Configuration], window: Window, tests, model, theta,
                    D_block: Optional[float] = None, quadrature: Optional[QuadratureScheme] = None,
                    per_block: int = 16) -> CovarianceReport:
    """Monte-Carlo sandwich: E and Sigma averaged over independent patterns
    simulated at the same theta, then combined."""
    Es, Ss = [], []
    side, nb, n_in = None, 0, 0
    for cfg in patterns:
        Es.append(estimate_E(cfg, window, tests, model, theta, quadrature))
        Sigma, grid, n_in = estimate_Sigma(cfg, tests, model, theta, D_block, per_block, return_grid=True)
        Ss.append(Sigma)
        side, nb = grid.side, grid.n_blocks
    E = np.mean(Es, axis=0)
    Sigma = np.mean(Ss, axis=0)
    sand, S = sandwich_covariance(E, Sigma)
    return CovarianceReport(E, Sigma, sand, S, side, nb, n_in)
