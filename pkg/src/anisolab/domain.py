"""Level-set domains, boundary meshes and anisotropic boundary geometry."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from . import grid as gridlib
from .grid import Grid
from .integrand import Integrand, Isotropic, make_integrand

#: grid cells kept between a shape and the edge of its box
MARGIN_CELLS = 8


class EmptyBoundaryError(ValueError):
    pass


@dataclass
class BoundaryMesh:
    """Quadrature samples on the zero contour of a level set.

    Attributes
    ----------
    points : (N, d) sample positions (element centroids).
    normals : (N, d) outward unit normals from the interpolated level-set gradient.
    weights : (N,) element lengths (2D) or areas (3D).
    """

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)

    def integrate(self, values) -> float:
        return float(np.sum(np.asarray(values) * self.weights))


@dataclass
class LevelSetDomain:
    """A set Omega = {phi < 0} sampled on a lattice-aligned Cartesian grid."""

    grid: Grid
    phi: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)
    _curvature_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != tuple(self.grid.shape):
            raise ValueError("level-set array does not match the grid shape")
        inside = self.phi < 0.0
        if not inside.any():
            raise ValueError("domain is empty: phi has no negative node")
        m = 3
        edge = np.zeros_like(inside)
        for axis in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[axis] = slice(0, m)
            edge[tuple(sl)] = True
            sl[axis] = slice(-m, None)
            edge[tuple(sl)] = True
        if np.any(inside & edge):
            raise ValueError("domain touches the box: keep a 3-cell margin")

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def spacing(self) -> float:
        return self.grid.spacing

    @property
    def inside(self) -> np.ndarray:
        return self.phi < 0.0

    @cached_property
    def fractions(self) -> np.ndarray:
        return gridlib.cell_fractions(self.phi)

    @cached_property
    def boundary(self) -> BoundaryMesh:
        return extract_boundary(self)

    @cached_property
    def components(self) -> int:
        return int(ndimage.label(self.inside)[1])

    def copy_with(self, phi, label=None) -> "LevelSetDomain":
        return LevelSetDomain(self.grid, phi, label or self.label, dict(self.meta))


# ---------------------------------------------------------------------------
# primitive level sets (all smooth near their zero set)
# ---------------------------------------------------------------------------

def _angle_profile(rel: np.ndarray, mode: int, phase: float) -> np.ndarray:
    if rel.shape[-1] == 2:
        theta = np.arctan2(rel[..., 1], rel[..., 0])
    else:
        r = np.linalg.norm(rel, axis=-1)
        theta = np.arccos(np.clip(rel[..., 2] / np.where(r == 0.0, 1.0, r), -1.0, 1.0))
    return np.cos(mode * theta + phase)


def _box_sdf(rel: np.ndarray, half: np.ndarray) -> np.ndarray:
    q = np.abs(rel) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    return outside + np.minimum(np.max(q, axis=-1), 0.0)


def _shape_extent(spec: dict, F: Integrand, dim: int):
    """Axis-aligned bounding box (lo, hi) of a primitive description."""
    kind = spec["type"]
    c = np.asarray(spec.get("center", np.zeros(dim)), dtype=float)
    if kind == "ball":
        r = float(spec.get("radius", 1.0))
        return c - r, c + r
    if kind == "ellipse":
        a = np.asarray(spec["semi_axes"], dtype=float)
        return c - a, c + a
    if kind in ("wulff", "perturbed"):
        base = spec if kind == "wulff" else spec["base"]
        G = _spec_integrand(base, F, dim)
        c = np.asarray(base.get("center", np.zeros(dim)), dtype=float)
        r = float(base.get("scale", 1.0)) * (1.0 + abs(float(spec.get("amplitude", 0.0))))
        r *= float(np.max(base.get("stretch", [1.0])))
        if base["type"] == "ball":
            r = float(base.get("radius", 1.0)) * (1.0 + abs(float(spec.get("amplitude", 0.0))))
            return c - r, c + r
        e = np.eye(dim)
        return c - r * G.value(-e), c + r * G.value(e)
    if kind == "union":
        boxes = [_shape_extent(m, F, dim) for m in spec["members"]]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)
    if kind == "dumbbell":
        centers, G, scale = _dumbbell_layout(spec, F, dim)
        e = np.eye(dim)
        lo = np.min([cc - scale * G.value(-e) for cc in centers], axis=0)
        hi = np.max([cc + scale * G.value(e) for cc in centers], axis=0)
        return lo, hi
    raise ValueError(f"unknown domain type {kind!r}")


def _spec_integrand(spec: dict, F: Integrand, dim: int) -> Integrand:
    if "integrand" in spec:
        return make_integrand(spec["integrand"])
    if F is not None:
        return F
    return Isotropic(dim)


def _dumbbell_layout(spec, F, dim):
    G = _spec_integrand(spec, F, dim)
    scale = float(spec.get("scale", 1.0))
    w = float(spec["neck_width"])
    gap = float(spec.get("gap", w))
    if w <= 0.0 or gap < 0.0:
        raise ValueError("neck width must be positive and the gap nonnegative")
    e1 = np.eye(dim)[0]
    offset = scale * G.value(e1) + 0.5 * gap
    centers = [-offset * e1, offset * e1]
    return centers, G, scale


def _primitive_phi(spec: dict, X: np.ndarray, F: Integrand, dim: int) -> np.ndarray:
    kind = spec["type"]
    c = np.asarray(spec.get("center", np.zeros(dim)), dtype=float)
    if kind == "ball":
        return np.linalg.norm(X - c, axis=-1) - float(spec.get("radius", 1.0))
    if kind == "ellipse":
        a = np.asarray(spec["semi_axes"], dtype=float)
        return (np.sqrt(np.sum(((X - c) / a) ** 2, axis=-1)) - 1.0) * a.min()
    if kind == "wulff":
        G = _spec_integrand(spec, F, dim)
        stretch = np.asarray(spec.get("stretch", np.ones(dim)), dtype=float)
        if stretch.shape != (dim,) or np.any(stretch <= 0.0):
            raise ValueError("stretch needs one positive factor per axis")
        return G.gauge((X - c) / stretch) - float(spec.get("scale", 1.0))
    if kind == "perturbed":
        base = spec["base"]
        c = np.asarray(base.get("center", np.zeros(dim)), dtype=float)
        if base["type"] == "ball":
            G, r = Isotropic(dim), float(base.get("radius", 1.0))
        elif base["type"] == "wulff":
            G, r = _spec_integrand(base, F, dim), float(base.get("scale", 1.0))
        else:
            raise ValueError("perturbations apply to 'ball' or 'wulff' bases")
        t = float(spec.get("amplitude", 0.0))
        bump = 1.0 + t * _angle_profile(X - c, int(spec.get("mode", 3)), float(spec.get("phase", 0.0)))
        if np.any(bump <= 0.0):
            raise ValueError("perturbation amplitude too large (radius would vanish)")
        return G.gauge(X - c) / bump - r
    if kind == "union":
        return np.min([_primitive_phi(m, X, F, dim) for m in spec["members"]], axis=0)
    if kind == "dumbbell":
        centers, G, scale = _dumbbell_layout(spec, F, dim)
        w = float(spec["neck_width"])
        shapes = [G.gauge(X - cc) - scale for cc in centers]
        half = np.full(dim, 0.5 * w)
        half[0] = centers[1][0]
        neck = _box_sdf(X, half)
        return np.min(shapes + [neck], axis=0)
    raise ValueError(f"unknown domain type {kind!r}")


def build_domain(spec: dict, spacing: float, integrand: Integrand | None = None,
                 dim: int | None = None, reinit_sweeps: int = 20,
                 box=None) -> LevelSetDomain:
    """Build a LevelSetDomain from a JSON-style description.

    Parameters
    ----------
    spec : dict
        ``{"type": ...}`` with type one of ball, ellipse, wulff, perturbed,
        union, dumbbell or grid.  Wulff-based shapes use ``spec["integrand"]``
        when present and otherwise the ``integrand`` argument.
    spacing : float
        Grid spacing h.
    box : optional (lo, hi) override of the bounding box.
    """
    if spec.get("type") == "grid":
        return load_grid_domain(spec)
    if dim is None:
        dim = integrand.dim if integrand is not None else _infer_dim(spec)
    if box is None:
        lo, hi = _shape_extent(spec, integrand, dim)
        pad = MARGIN_CELLS * spacing
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = box
    g = Grid.covering(lo, hi, spacing)
    phi = _primitive_phi(spec, g.coords(), integrand, dim)
    if reinit_sweeps:
        phi = gridlib.reinitialize(phi, spacing, sweeps=reinit_sweeps)
    return LevelSetDomain(g, phi, label=spec.get("label", spec["type"]), meta={"spec": spec})


def _infer_dim(spec: dict) -> int:
    for key in ("center", "semi_axes"):
        if key in spec:
            return len(spec[key])
    if "integrand" in spec:
        return make_integrand(spec["integrand"]).dim
    for key in ("members",):
        if key in spec:
            return _infer_dim(spec[key][0])
    if "base" in spec:
        return _infer_dim(spec["base"])
    return 2


def load_grid_domain(spec: dict) -> LevelSetDomain:
    """Raw import: little-endian binary64 node values plus a JSON header.

    The header holds ``shape`` (node counts, C order), ``spacing`` and
    ``origin``; it is given inline as ``spec["header"]`` or read from
    ``spec["header_path"]``.  Values come from ``spec["data_path"]``.
    """
    header = spec.get("header")
    if header is None:
        header = json.loads(Path(spec["header_path"]).read_text())
    shape = tuple(int(n) for n in header.get("shape", header.get("dims")))
    data = np.fromfile(spec["data_path"], dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"grid data has {data.size} values, header expects {int(np.prod(shape))}")
    g = Grid(tuple(float(o) for o in header["origin"]), float(header["spacing"]), shape)
    phi = data.reshape(shape)
    sweeps = int(spec.get("reinit_sweeps", 20))
    if sweeps:
        phi = gridlib.reinitialize(phi, g.spacing, sweeps=sweeps)
    return LevelSetDomain(g, phi, label=spec.get("label", "grid"), meta={"spec": spec})


def save_grid_domain(D: LevelSetDomain, data_path, header_path=None) -> dict:
    header = {"shape": list(D.grid.shape), "spacing": D.spacing, "origin": list(D.grid.origin)}
    np.asarray(D.phi, dtype="<f8").tofile(data_path)
    if header_path is not None:
        Path(header_path).write_text(json.dumps(header))
    return header


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def extract_boundary(D: LevelSetDomain) -> BoundaryMesh:
    """Contour the zero level set and attach normals and quadrature weights."""
    centres, measures, _ = gridlib.contour_elements(D.grid, D.phi)
    if len(measures) == 0:
        raise EmptyBoundaryError("empty boundary")
    centres = gridlib.project_to_zero_set(D.grid, D.phi, centres)
    g = gridlib.interpolate(D.grid, gridlib.gradient(D.phi, D.spacing), centres)
    n = np.linalg.norm(g, axis=1)
    if np.any(n == 0.0):
        raise EmptyBoundaryError("level-set gradient vanishes on the boundary")
    return BoundaryMesh(points=centres, normals=g / n[:, None], weights=measures)


def surface_energy(D: LevelSetDomain, F: Integrand) -> float:
    B = D.boundary
    return B.integrate(F.value(B.normals))


def curvature_field(D: LevelSetDomain, F: Integrand, threshold: float = 0.1):
    """Node field div(grad F(grad phi)) and the mask of excluded nodes.

    Nodes where |grad phi| < threshold would divide by a vanishing gradient and
    are in-painted from their neighbours instead.
    """
    key = (id(F), threshold)
    if key in D._curvature_cache:
        return D._curvature_cache[key]
    h = D.spacing
    g = gridlib.gradient(D.phi, h)
    valid = np.linalg.norm(g, axis=-1) >= threshold
    safe = np.where(valid[..., None], g, np.eye(D.dim)[0])
    flux = F.grad(safe)
    for k in range(D.dim):
        flux[..., k] = gridlib.inpaint(flux[..., k], valid)
    H = gridlib.divergence(flux, h)
    # a node whose divergence stencil touched an excluded node is itself suspect
    touched = ~valid
    for axis in range(D.dim):
        touched = touched | np.roll(~valid, 1, axis=axis) | np.roll(~valid, -1, axis=axis)
    H = gridlib.inpaint(H, ~touched)
    D._curvature_cache[key] = (H, touched)
    return H, touched


def aniso_mean_curvature(D: LevelSetDomain, F: Integrand) -> np.ndarray:
    """H^F at every boundary sample, interpolated from the node field."""
    H, excluded = curvature_field(D, F)
    B = D.boundary
    idx = np.floor(D.grid.to_index(B.points)).astype(int)
    corners = np.stack(np.meshgrid(*[[0, 1]] * D.dim, indexing="ij"), axis=-1).reshape(-1, D.dim)
    bad = np.ones(len(B), dtype=bool)
    for off in corners:
        node = tuple((idx + off).T)
        bad &= excluded[node]
    if np.any(bad):
        raise ValueError("degenerate stencil: level-set gradient vanishes around a boundary sample")
    return gridlib.interpolate(D.grid, H, B.points)


def volume(D: LevelSetDomain) -> float:
    return float(D.fractions.sum() * D.spacing ** D.dim)


def node_volumes(D: LevelSetDomain) -> np.ndarray:
    """Nodal quadrature weights for integrals over Omega.

    Each cell's inside volume is split evenly among its corners, so nodes just
    outside the boundary carry weight too; fields integrated with these
    weights must be defined on that first outside layer.
    """
    d = D.dim
    frac = D.fractions * D.spacing ** d / 2 ** d
    vol = np.zeros(D.phi.shape)
    n = frac.shape
    for off in np.ndindex(*(2,) * d):
        vol[tuple(slice(o, o + m) for o, m in zip(off, n))] += frac
    return vol


def reference_curvature(D: LevelSetDomain, F: Integrand) -> float:
    vol = volume(D)
    if vol <= 0.0:
        raise ValueError("zero volume")
    n = D.dim - 1
    return n * surface_energy(D, F) / ((n + 1) * vol)


def diameter(D: LevelSetDomain) -> float:
    """Largest distance between boundary samples."""
    pts = D.boundary.points
    if len(pts) > D.dim + 1:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # degenerate hull: fall back to all samples
            pass
    return float(pdist(pts).max())


def aniso_signed_distance(D: LevelSetDomain, F: Integrand, x) -> np.ndarray:
    """Anisotropic signed distance, negative inside, from the boundary samples."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    Y = D.boundary.points
    inside = gridlib.interpolate(D.grid, D.phi, x) < 0.0
    out = np.empty(len(x))
    for i, p in enumerate(x):
        if inside[i]:
            out[i] = -np.min(F.gauge(Y - p))
        else:
            out[i] = np.min(F.gauge(p - Y))
    return out


def symmetric_difference(D1: LevelSetDomain, D2: LevelSetDomain) -> float:
    """|D1 xor D2| for two domains on the same grid."""
    if D1.grid != D2.grid:
        raise ValueError("symmetric difference needs a common grid")
    both = gridlib.volume(np.maximum(D1.phi, D2.phi), D1.spacing)
    return volume(D1) + volume(D2) - 2.0 * both


def describe(D: LevelSetDomain, F: Integrand) -> dict:
    """Geometry summary used by reports."""
    vol = volume(D)
    energy = surface_energy(D, F)
    n = D.dim - 1
    return {"label": D.label, "dim": D.dim, "spacing": D.spacing, "volume": vol,
            "surfaceEnergy": energy, "diameter": diameter(D),
            "referenceCurvature": n * energy / ((n + 1) * vol),
            "components": D.components,
            "diameterIncludesGaps": D.components > 1}
