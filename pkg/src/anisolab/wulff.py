"""Wulff shapes K_F = {F_* < 1} and their exact geometric constants."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import grid as gridlib
from .domain import LevelSetDomain, surface_energy
from .grid import Grid
from .integrand import Integrand

CACHE_ENV = "ANISOLAB_CACHE"


@dataclass(frozen=True)
class WulffShape:
    """A sampled Wulff shape ``center + scale * K_F``.

    Attributes
    ----------
    integrand : the defining Integrand.
    grid : node lattice of the bounding box.
    levelset : F_*((x - center) / scale) - 1 at the nodes, negative exactly inside.
    volume : cell-fraction volume.
    """

    integrand: Integrand
    grid: Grid
    levelset: np.ndarray = field(repr=False)
    volume: float
    scale: float = 1.0
    center: tuple = ()

    @property
    def dim(self) -> int:
        return self.grid.dim

    @cached_property
    def domain(self) -> LevelSetDomain:
        """The shape as a LevelSetDomain with a reinitialised level set."""
        phi = gridlib.reinitialize(self.scale * self.levelset, self.grid.spacing)
        return LevelSetDomain(self.grid, phi, label="wulff")

    @cached_property
    def momentConstant(self) -> float:
        return moment_constant(self)

    def to_json(self, alphas=(0.0, 0.5, 1.0, 2.0, 3.0)) -> dict:
        return {"integrand": self.integrand.to_json(), "grid": self.grid.to_json(),
                "scale": self.scale, "volume": self.volume,
                "momentConstant": self.momentConstant,
                "moments": [{"alpha": float(a), "value": gauge_moment(self, a)} for a in alphas]}


def _cache_path(F: Integrand, spacing: float, scale: float, center) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    key = json.dumps({"integrand": F.to_json(), "spacing": spacing, "scale": scale,
                      "center": list(center)}, sort_keys=True)
    return Path(root) / f"wulff-{hashlib.sha256(key.encode()).hexdigest()[:20]}.npy"


def build_wulff(F: Integrand, grid_spec, scale: float = 1.0, center=None) -> WulffShape:
    """Sample ``center + scale * K_F`` on a grid.

    Parameters
    ----------
    grid_spec : float or Grid
        A spacing, in which case the box is ``center + [-1.5 s M_F, 1.5 s M_F]^d``,
        or an explicit Grid, which must contain the ball of radius ``s M_F``.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    center = np.zeros(F.dim) if center is None else np.asarray(center, dtype=float)
    reach = scale * F.profile.MF
    if isinstance(grid_spec, Grid):
        g = grid_spec
        if g.dim != F.dim:
            raise ValueError("grid and integrand dimensions differ")
        lo, hi = np.asarray(g.origin), np.asarray(g.upper)
        if np.any(center - reach < lo) or np.any(center + reach > hi):
            raise ValueError("grid box does not contain the ball of radius M_F")
    else:
        g = Grid.covering(center - 1.5 * reach, center + 1.5 * reach, float(grid_spec))
    path = _cache_path(F, g.spacing, scale, center) if not isinstance(grid_spec, Grid) else None
    if path is not None and path.exists():
        levelset = np.load(path)
    else:
        levelset = F.gauge((g.coords() - center) / scale) - 1.0
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, levelset)
    vol = gridlib.volume(levelset, g.spacing)
    return WulffShape(F, g, levelset, vol, float(scale), tuple(center.tolist()))


def moment_constant(K: WulffShape) -> float:
    """Boundary integral of 1/|grad F_*| over the boundary of K.

    The gauge is the unscaled F_*, whose gradient is zero-homogeneous, so
    the constant of ``r K_F`` is ``r^n C_K``.
    """
    B = K.domain.boundary
    rel = B.points - np.asarray(K.center)
    slope = np.linalg.norm(K.integrand.gauge_grad(rel), axis=-1)
    return B.integrate(1.0 / slope)


def gauge_moment(K: WulffShape, alpha: float) -> float:
    """Integral of F_*^alpha over the Wulff shape by cut-cell quadrature.

    Each cell contributes its inside fraction times the mean of the clipped
    corner values of F_* (rescaled to the shape).
    """
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0.0:
        return K.volume
    gauge_values = np.clip(K.scale * (K.levelset + 1.0), 0.0, K.scale) ** alpha
    frac = gridlib.cell_fractions(K.levelset)
    d = K.dim
    n = tuple(s - 1 for s in gauge_values.shape)
    corners = [gauge_values[tuple(slice(o, o + m) for o, m in zip(off, n))]
               for off in np.ndindex(*(2,) * d)]
    mean = np.mean(corners, axis=0)
    return float(np.sum(frac * mean) * K.grid.spacing ** d)


def wulff_energy(K: WulffShape) -> float:
    return surface_energy(K.domain, K.integrand)
