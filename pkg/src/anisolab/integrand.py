"""Convex one-homogeneous integrands, their gauges and ellipticity profiles.

Every integrand works on arrays whose last axis holds vector components, so
``F.value(nu)`` accepts a single vector of shape ``(d,)`` as well as a batch of
shape ``(..., d)``.  Derivatives are analytic for every kind; the gauge is in
closed form for the isotropic, ellipse and p-norm kinds and is obtained by
maximising ``x . nu / F(nu)`` over the sphere for the remaining kinds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import HalfspaceIntersection
from scipy.special import logsumexp

KINDS = ("isotropic", "ellipse", "pnorm", "crystal", "tabulated")


class DegenerateIntegrandError(ValueError):
    """Raised when a derivative is requested from a non-smooth integrand."""


# ---------------------------------------------------------------------------
# sphere samples
# ---------------------------------------------------------------------------

def fibonacci_sphere(count: int, dim: int) -> np.ndarray:
    """Quasi-uniform unit vectors; equally spaced angles in 2D."""
    if dim == 2:
        theta = 2.0 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if dim != 3:
        raise ValueError(f"dimension must be 2 or 3, got {dim}")
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _radical_inverse(i: np.ndarray, base: int) -> np.ndarray:
    out = np.zeros(i.shape, dtype=float)
    f = 1.0 / base
    i = i.copy()
    while np.any(i > 0):
        out += f * (i % base)
        i //= base
        f /= base
    return out


def nested_sphere_sample(count: int, dim: int) -> np.ndarray:
    """Low-discrepancy unit vectors whose first ``k`` points never change.

    Extrema over this sample can only tighten as ``count`` grows, which is the
    property the ellipticity estimate relies on.
    """
    i = np.arange(count)
    if dim == 2:
        theta = 2.0 * np.pi * _radical_inverse(i, 2)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    u = _radical_inverse(i, 2)
    v = _radical_inverse(i, 3)
    z = 1.0 - 2.0 * u
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = 2.0 * np.pi * v
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., :, None] * b[..., None, :]


def _as_vectors(v, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != dim:
        raise ValueError(f"expected vectors of dimension {dim}, got shape {v.shape}")
    return v


def _require_nonzero(v: np.ndarray) -> None:
    if np.any(_norm(v) == 0.0):
        raise ValueError("derivative requested at the zero vector")


# ---------------------------------------------------------------------------
# base class
# ---------------------------------------------------------------------------

class Integrand:
    """Base class: a convex, positive, one-homogeneous function on R^d.

    Subclasses supply ``value``, ``grad`` and ``hess`` (Hessian of F itself)
    and either a closed-form gauge or rely on the numeric one provided here.
    """

    kind = "abstract"
    smooth = True

    def __init__(self, dim: int):
        if dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {dim}")
        self.dim = int(dim)

    # -- primal -------------------------------------------------------------
    def value(self, nu):
        raise NotImplementedError

    def grad(self, nu):
        raise NotImplementedError

    def hess(self, nu):
        raise NotImplementedError

    # -- dual ---------------------------------------------------------------
    def gauge(self, x):
        return self._numeric_gauge(x)[0]

    def gauge_grad(self, x):
        x = _as_vectors(x, self.dim)
        _require_nonzero(x)
        self._check_smooth()
        _, nu = self._numeric_gauge(x)
        return nu / self.value(nu)[..., None]

    def gauge_hess(self, x):
        """Hessian of the gauge.

        Kinds without a closed-form gauge differentiate the numerically
        maximised gauge gradient with a fourth-order central stencil whose
        step follows the smallest curvature radius of the Wulff shape.
        """
        x = _as_vectors(x, self.dim)
        step = 1e-5 * min(1.0, self.profile.lamStar)
        scale = step * _norm(x)[..., None]
        weights = ((2.0, -1.0 / 12.0), (1.0, 2.0 / 3.0))
        cols = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            col = 0.0
            for mult, w in weights:
                gp = self.gauge_grad(x + mult * scale * e)
                gm = self.gauge_grad(x - mult * scale * e)
                col = col + w * (gp - gm)
            cols.append(col / scale)
        hess = np.stack(cols, axis=-1)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))

    # -- F^2/2 and its dual ------------------------------------------------------
    def half_square_grad(self, xi):
        """Cahn-Hoffman map: F(xi) grad F(xi), and exactly zero at xi = 0."""
        xi = _as_vectors(xi, self.dim)
        n = _norm(xi)
        zero = n == 0.0
        safe = np.where(zero[..., None], 1.0, xi)
        out = self.value(safe)[..., None] * self.grad(safe)
        return np.where(zero[..., None], 0.0, out)

    def half_square_hess(self, xi):
        """grad F (x) grad F + F hess F; zero-homogeneous, so direction only."""
        xi = _as_vectors(xi, self.dim)
        n = _norm(xi)
        safe = np.where((n == 0.0)[..., None], np.eye(self.dim)[0], xi)
        g = self.grad(safe)
        return _outer(g, g) + self.value(safe)[..., None, None] * self.hess(safe)

    def dual_half_square_grad(self, x):
        x = _as_vectors(x, self.dim)
        n = _norm(x)
        zero = n == 0.0
        safe = np.where(zero[..., None], 1.0, x)
        out = self.gauge(safe)[..., None] * self.gauge_grad(safe)
        return np.where(zero[..., None], 0.0, out)

    def dual_half_square_hess(self, x):
        x = _as_vectors(x, self.dim)
        g = self.gauge_grad(x)
        return _outer(g, g) + self.gauge(x)[..., None, None] * self.gauge_hess(x)

    # -- numeric gauge ------------------------------------------------------------
    def _check_smooth(self):
        if not self.smooth:
            raise DegenerateIntegrandError(
                f"{self.kind} integrand is not smooth; use a smoothed member of its family")

    def _coarse_directions(self) -> np.ndarray:
        return fibonacci_sphere(2 ** 10 if self.dim == 2 else 2 ** 14, self.dim)

    def _numeric_gauge(self, x, iterations: int = 40, chunk: int = 4096):
        """Return (F_*(x), maximising unit normal) by sampling plus Newton ascent.

        The ratio x.nu / F(nu) is zero-homogeneous in nu, so its Riemannian
        Hessian on the sphere is the tangential projection of the Euclidean one.
        """
        x = _as_vectors(x, self.dim)
        shape = x.shape[:-1]
        xs = x.reshape(-1, self.dim)
        dirs = self._coarse_directions()
        inv_f = 1.0 / self.value(dirs)
        best = np.empty(len(xs), dtype=int)
        for s in range(0, len(xs), chunk):
            scores = (xs[s:s + chunk] @ dirs.T) * inv_f
            best[s:s + chunk] = np.argmax(scores, axis=1)
        nu = dirs[best].copy()
        active = _norm(xs) > 0.0
        d = self.dim
        eye = np.eye(d)

        def ratio(points, v):
            return np.sum(points * v, axis=-1) / self.value(v)

        current = ratio(xs, nu)
        for _ in range(iterations):
            if not np.any(active):
                break
            idx = np.nonzero(active)[0]
            v, xv = nu[idx], xs[idx]
            f = self.value(v)
            g = self.grad(v)
            H = self.hess(v)
            xn = np.sum(xv * v, axis=-1)
            grad_r = xv / f[:, None] - (xn / f ** 2)[:, None] * g
            hess_r = (-(_outer(xv, g) + _outer(g, xv)) / (f ** 2)[:, None, None]
                      - (xn / f ** 2)[:, None, None] * H
                      + (2.0 * xn / f ** 3)[:, None, None] * _outer(g, g))
            P = eye - _outer(v, v)
            tg = np.einsum("nij,nj->ni", P, grad_r)
            tH = P @ hess_r @ P
            # Newton step in the tangent plane; v v^T fills the normal direction.
            system = tH - _outer(v, v)
            step = np.linalg.solve(system, -tg[..., None])[..., 0]
            curv = np.einsum("ni,nij,nj->n", step, tH, step)
            bad = ~(curv < 0.0) | ~np.all(np.isfinite(step), axis=-1)
            scale = np.abs(xn) / np.maximum(f, 1e-300)
            step = np.where(bad[:, None], 0.1 * tg / np.maximum(scale, 1e-300)[:, None], step)
            length = _norm(step)
            step = np.where((length > 0.5)[:, None], step * (0.5 / np.maximum(length, 1e-300))[:, None], step)
            old = current[idx]
            # near the optimum the ratio is flat to rounding, so accept steps
            # that do not lose more than a few ulps
            slack = 1e-14 * np.maximum(np.abs(old), 1e-300)
            t = np.ones(len(idx))
            accepted = np.zeros(len(idx), dtype=bool)
            trial_nu = v.copy()
            trial_val = old.copy()
            for _bt in range(30):
                cand = v + t[:, None] * step
                cand /= _norm(cand)[:, None]
                val = ratio(xv, cand)
                ok = (val >= old - slack) & ~accepted
                trial_nu[ok] = cand[ok]
                trial_val[ok] = val[ok]
                accepted |= ok
                if np.all(accepted):
                    break
                t = np.where(accepted, t, 0.5 * t)
            nu[idx] = trial_nu
            current[idx] = trial_val
            active[idx] = (_norm(step) * t > 1e-14) & accepted
        if d == 2:
            # polish only where Newton left a tangential gradient behind
            live = np.nonzero(_norm(xs) > 0.0)[0]
            v, xv = nu[live], xs[live]
            f = self.value(v)
            grad_r = xv / f[:, None] - (np.sum(xv * v, axis=-1) / f ** 2)[:, None] * self.grad(v)
            tangential = np.abs(grad_r[:, 0] * v[:, 1] - grad_r[:, 1] * v[:, 0])
            stalled = live[tangential > 1e-9 * np.maximum(np.abs(current[live]), 1e-300)]
            if len(stalled):
                nu[stalled], current[stalled] = self._golden_polish(
                    xs[stalled], nu[stalled], current[stalled], dirs[best[stalled]], ratio)
        value = np.where(_norm(xs) > 0.0, np.maximum(ratio(xs, nu), 0.0), 0.0)
        return value.reshape(shape), nu.reshape(shape + (self.dim,))

    @staticmethod
    def _golden_polish(xs, nu, current, seed, ratio, iterations: int = 60):
        """Golden-section search on the angle around the best coarse sample (2D only).

        Newton stalls where the Hessian of the ratio is singular or unbounded
        (the dual of a p-norm near the axes).  Along the convex unit curve the
        ratio is unimodal, so a bracket of two coarse spacings around the
        sampled maximiser contains the optimum; the better of the two results
        is kept.
        """
        base = np.arctan2(seed[:, 1], seed[:, 0])
        width = 2.0 * (2.0 * np.pi / 2 ** 10)
        lo, hi = base - width, base + width
        unit = lambda a: np.stack([np.cos(a), np.sin(a)], axis=-1)
        phi = 0.5 * (np.sqrt(5.0) - 1.0)
        a, b = hi - phi * (hi - lo), lo + phi * (hi - lo)
        fa, fb = ratio(xs, unit(a)), ratio(xs, unit(b))
        for _ in range(iterations):
            left = fa >= fb
            hi = np.where(left, b, hi)
            lo = np.where(left, lo, a)
            new = np.where(left, hi - phi * (hi - lo), lo + phi * (hi - lo))
            fnew = ratio(xs, unit(new))
            a, b, fa, fb = (np.where(left, new, b), np.where(left, a, new),
                            np.where(left, fnew, fb), np.where(left, fa, fnew))
        angle = np.where(fa >= fb, a, b)
        value = np.maximum(fa, fb)
        better = value > current
        return np.where(better[:, None], unit(angle), nu), np.where(better, value, current)

    # -- bookkeeping --------------------------------------------------------------
    def params(self) -> dict:
        return {}

    def to_json(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "params": self.params()}

    @cached_property
    def profile(self) -> "EllipticityProfile":
        return ellipticity_estimate(self, 256 if self.dim == 2 else 2048)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, {self.params()})"


# ---------------------------------------------------------------------------
# kinds
# ---------------------------------------------------------------------------

class Isotropic(Integrand):
    """The Euclidean norm; self-dual."""

    kind = "isotropic"

    def value(self, nu):
        return _norm(_as_vectors(nu, self.dim))

    def grad(self, nu):
        nu = _as_vectors(nu, self.dim)
        _require_nonzero(nu)
        return nu / _norm(nu)[..., None]

    def hess(self, nu):
        nu = _as_vectors(nu, self.dim)
        _require_nonzero(nu)
        n = _norm(nu)
        e = nu / n[..., None]
        return (np.eye(self.dim) - _outer(e, e)) / n[..., None, None]

    def gauge(self, x):
        return self.value(x)

    def gauge_grad(self, x):
        return self.grad(x)

    def gauge_hess(self, x):
        return self.hess(x)


class Ellipse(Integrand):
    """F(nu) = sqrt(sum a_i^2 nu_i^2); the Wulff shape has semi-axes a_i."""

    kind = "ellipse"

    def __init__(self, axes):
        axes = np.asarray(axes, dtype=float)
        super().__init__(len(axes))
        if np.any(axes <= 0.0):
            raise ValueError("ellipse semi-axes must be positive")
        self.axes = axes
        self._a2 = axes ** 2

    def params(self):
        return {"axes": self.axes.tolist()}

    @staticmethod
    def _quad(v, w):
        return np.sqrt(np.sum(w * v * v, axis=-1))

    def value(self, nu):
        return self._quad(_as_vectors(nu, self.dim), self._a2)

    def grad(self, nu):
        nu = _as_vectors(nu, self.dim)
        _require_nonzero(nu)
        return self._a2 * nu / self.value(nu)[..., None]

    def hess(self, nu):
        nu = _as_vectors(nu, self.dim)
        _require_nonzero(nu)
        f = self.value(nu)
        an = self._a2 * nu
        return (np.diag(self._a2) - _outer(an, an) / (f ** 2)[..., None, None]) / f[..., None, None]

    def gauge(self, x):
        return self._quad(_as_vectors(x, self.dim), 1.0 / self._a2)

    def gauge_grad(self, x):
        x = _as_vectors(x, self.dim)
        _require_nonzero(x)
        return x / self._a2 / self.gauge(x)[..., None]

    def gauge_hess(self, x):
        x = _as_vectors(x, self.dim)
        _require_nonzero(x)
        g = self.gauge(x)
        w = 1.0 / self._a2
        xw = w * x
        return (np.diag(w) - _outer(xw, xw) / (g ** 2)[..., None, None]) / g[..., None, None]

    def half_square_grad(self, xi):
        return self._a2 * _as_vectors(xi, self.dim)

    def half_square_hess(self, xi):
        xi = _as_vectors(xi, self.dim)
        return np.broadcast_to(np.diag(self._a2), xi.shape + (self.dim,)).copy()


def _pnorm_parts(v, p):
    """Value, gradient and Hessian of the p-norm (valid off coordinate planes for p < 2)."""
    n = np.sum(np.abs(v) ** p, axis=-1) ** (1.0 / p)
    r = v / n[..., None]
    g = np.sign(r) * np.abs(r) ** (p - 1.0)
    with np.errstate(divide="ignore"):
        diag = np.abs(r) ** (p - 2.0)
    eye = np.eye(v.shape[-1])
    H = (p - 1.0) / n[..., None, None] * (eye * diag[..., None, :] - _outer(g, g))
    return n, g, H


class PNorm(Integrand):
    """F(nu) = |nu|_p with 1 < p < inf; its gauge is the conjugate q-norm."""

    kind = "pnorm"

    def __init__(self, p, dim=2):
        super().__init__(dim)
        p = float(p)
        if not 1.0 < p < np.inf:
            raise ValueError("p-norm exponent must lie in (1, inf)")
        self.p = p
        self.q = p / (p - 1.0)
        # the p-norm is C^2 with a bounded Hessian on the sphere only for p = 2
        self.smooth = True

    def params(self):
        return {"p": self.p}

    def value(self, nu):
        nu = _as_vectors(nu, self.dim)
        return np.sum(np.abs(nu) ** self.p, axis=-1) ** (1.0 / self.p)

    def grad(self, nu):
        nu = _as_vectors(nu, self.dim)
        _require_nonzero(nu)
        return _pnorm_parts(nu, self.p)[1]

    def hess(self, nu):
        nu = _as_vectors(nu, self.dim)
        _require_nonzero(nu)
        return _pnorm_parts(nu, self.p)[2]

    def gauge(self, x):
        x = _as_vectors(x, self.dim)
        return np.sum(np.abs(x) ** self.q, axis=-1) ** (1.0 / self.q)

    def gauge_grad(self, x):
        x = _as_vectors(x, self.dim)
        _require_nonzero(x)
        return _pnorm_parts(x, self.q)[1]

    def gauge_hess(self, x):
        x = _as_vectors(x, self.dim)
        _require_nonzero(x)
        return _pnorm_parts(x, self.q)[2]


def polytope_vertices(normals, weights) -> np.ndarray:
    """Vertices of {x : n_i . x <= w_i}, which must be bounded and contain 0."""
    normals = np.asarray(normals, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if normals.ndim != 2 or len(normals) != len(weights):
        raise ValueError("facet normals and weights must have matching lengths")
    if np.any(weights <= 0.0):
        raise ValueError("facet weights must be positive so that 0 is interior")
    lengths = np.linalg.norm(normals, axis=1)
    if np.any(lengths == 0.0):
        raise ValueError("facet normals must be nonzero")
    unit = normals / lengths[:, None]
    w = weights / lengths
    # positivity of the support function on the sphere <=> bounded polytope
    dirs = fibonacci_sphere(2048 if normals.shape[1] == 2 else 4096, normals.shape[1])
    if np.any(np.max(dirs @ unit.T, axis=1) <= 1e-9):
        raise ValueError("facet normals do not bound a polytope (support not positive)")
    hs = HalfspaceIntersection(np.hstack([unit, -w[:, None]]), np.zeros(normals.shape[1]))
    verts = hs.intersections
    # merge duplicates produced by degenerate vertices
    keep = []
    for v in verts:
        if not any(np.linalg.norm(v - k) < 1e-10 for k in keep):
            keep.append(v)
    return np.array(keep)


class SmoothedCrystal(Integrand):
    """Log-sum-exp smoothing of a crystalline support function.

    The limit is the support function ``max_j v_j . nu`` of the polytope
    ``{x : n_i . x <= w_i}``.  The smoothed member is

        F_eps(nu) = [eps |nu| log sum_j exp(v_j . nu / (eps |nu|)) + eps^2 |nu|] / c

    with ``c`` chosen so that the largest ratio F_eps(n_i) / w_i equals one.
    ``eps = 0`` gives the crystalline limit itself, which is not smooth.
    """

    kind = "crystal"

    def __init__(self, normals, weights=None, eps=0.1):
        normals = np.asarray(normals, dtype=float)
        super().__init__(normals.shape[1])
        if weights is None:
            weights = np.ones(len(normals))
        self.normals = normals
        self.weights = np.asarray(weights, dtype=float)
        self.eps = float(eps)
        if self.eps < 0.0:
            raise ValueError("smoothing parameter must be nonnegative")
        self.smooth = self.eps > 0.0
        self.vertices = polytope_vertices(normals, self.weights)
        self.scale = 1.0
        if self.smooth:
            unit = normals / np.linalg.norm(normals, axis=1)[:, None]
            w = self.weights / np.linalg.norm(normals, axis=1)
            self.scale = float(np.max(self._raw(unit) / w))

    def params(self):
        return {"normals": self.normals.tolist(), "weights": self.weights.tolist(), "eps": self.eps}

    def limit(self, nu):
        return np.max(_as_vectors(nu, self.dim) @ self.vertices.T, axis=-1)

    def _raw(self, nu):
        n = _norm(nu)
        if not self.smooth:
            return self.limit(nu)
        safe = np.where(n == 0.0, 1.0, n)
        s = nu @ self.vertices.T / (self.eps * safe[..., None])
        return np.where(n == 0.0, 0.0, self.eps * n * logsumexp(s, axis=-1) + self.eps ** 2 * n)

    def value(self, nu):
        return self._raw(_as_vectors(nu, self.dim)) / self.scale

    def _weights(self, nu):
        n = _norm(nu)
        s = nu @ self.vertices.T / (self.eps * n[..., None])
        return np.exp(s - logsumexp(s, axis=-1)[..., None]), n

    def grad(self, nu):
        nu = _as_vectors(nu, self.dim)
        _require_nonzero(nu)
        self._check_smooth()
        pi, n = self._weights(nu)
        e = nu / n[..., None]
        mean_v = pi @ self.vertices
        ent = self._raw(nu) / n  # eps*lse + eps^2
        # d/dnu [eps n lse(V nu/(eps n))] = eps lse e + (I - e e^T) sum pi v
        g = ent[..., None] * e + mean_v - np.sum(mean_v * e, axis=-1)[..., None] * e
        return g / self.scale

    def hess(self, nu):
        nu = _as_vectors(nu, self.dim)
        _require_nonzero(nu)
        self._check_smooth()
        pi, n = self._weights(nu)
        e = nu / n[..., None]
        P = np.eye(self.dim) - _outer(e, e)
        mean_v = pi @ self.vertices
        cov = np.einsum("...j,jk,jl->...kl", pi, self.vertices, self.vertices) - _outer(mean_v, mean_v)
        ent = self._raw(nu) / n
        # one-homogeneous: the Hessian lives on e^perp and is P M P / n
        tang = cov / self.eps + (ent - np.sum(mean_v * e, axis=-1))[..., None, None] * np.eye(self.dim)
        return (P @ tang @ P) / (n[..., None, None] * self.scale)


class TabulatedSupport(Integrand):
    """Two-dimensional support function tabulated on equally spaced angles.

    The table is interpolated by a periodic cubic spline s(theta), and
    F(nu) = |nu| s(arg nu).  Convexity (s + s'' > 0) is validated at
    construction time.
    """

    kind = "tabulated"

    def __init__(self, support, angles=None):
        super().__init__(2)
        support = np.asarray(support, dtype=float)
        if support.ndim != 1 or len(support) < 8:
            raise ValueError("support table needs at least 8 values")
        if angles is None:
            angles = 2.0 * np.pi * np.arange(len(support)) / len(support)
        angles = np.asarray(angles, dtype=float)
        if np.any(np.diff(angles) <= 0.0) or angles[-1] - angles[0] >= 2.0 * np.pi:
            raise ValueError("angles must be increasing within one period")
        if np.any(support <= 0.0):
            raise ValueError("support values must be positive")
        self.support = support
        self.angles = angles
        self._spline = CubicSpline(np.append(angles, angles[0] + 2.0 * np.pi),
                                   np.append(support, support[0]), bc_type="periodic")
        theta = np.linspace(0.0, 2.0 * np.pi, 16 * len(support), endpoint=False)
        radius = self._spline(theta) + self._spline(theta, 2)
        if np.min(radius) <= 0.0:
            raise ValueError("tabulated support function is not convex (s + s'' <= 0)")

    def params(self):
        return {"support": self.support.tolist(), "angles": self.angles.tolist()}

    def _polar(self, nu):
        nu = _as_vectors(nu, 2)
        n = _norm(nu)
        th = np.arctan2(nu[..., 1], nu[..., 0])
        er = np.stack([np.cos(th), np.sin(th)], axis=-1)
        et = np.stack([-np.sin(th), np.cos(th)], axis=-1)
        return n, th, er, et

    def value(self, nu):
        n, th, _, _ = self._polar(nu)
        return n * self._spline(th)

    def grad(self, nu):
        nu = _as_vectors(nu, 2)
        _require_nonzero(nu)
        _, th, er, et = self._polar(nu)
        return self._spline(th)[..., None] * er + self._spline(th, 1)[..., None] * et

    def hess(self, nu):
        nu = _as_vectors(nu, 2)
        _require_nonzero(nu)
        n, th, _, et = self._polar(nu)
        rad = self._spline(th) + self._spline(th, 2)
        return (rad / n)[..., None, None] * _outer(et, et)


# ---------------------------------------------------------------------------
# ellipticity and construction helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EllipticityProfile:
    mF: float
    MF: float
    lam: float
    Lam: float
    lamStar: float
    LamStar: float
    samples: int

    def to_json(self):
        return {"mF": self.mF, "MF": self.MF, "lambda": self.lam, "Lambda": self.Lam,
                "lambdaStar": self.lamStar, "LambdaStar": self.LamStar,
                "sampleCount": self.samples}


def ellipticity_estimate(F: Integrand, sample_count: int = 256) -> EllipticityProfile:
    """Extremise F, the tangential Hessian of F and the Hessian of F^2/2 on the sphere."""
    minimum = 64 if F.dim == 2 else 1024
    if sample_count < minimum:
        raise ValueError(f"sampleCount must be at least {minimum} in {F.dim}D")
    nu = nested_sphere_sample(sample_count, F.dim)
    f = F.value(nu)
    H = F.hess(nu)
    P = np.eye(F.dim) - _outer(nu, nu)
    # eigenvalues of the Hessian restricted to nu^perp
    if F.dim == 2:
        t = np.stack([-nu[:, 1], nu[:, 0]], axis=-1)
        tang = np.einsum("ni,nij,nj->n", t, H, t)[:, None]
    else:
        a = np.where(np.abs(nu[:, :1]) < 0.9, np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
        t1 = np.einsum("nij,nj->ni", P, a)
        t1 /= _norm(t1)[:, None]
        t2 = np.cross(nu, t1)
        T = np.stack([t1, t2], axis=-1)
        tang = np.linalg.eigvalsh(np.swapaxes(T, 1, 2) @ H @ T)
    star = np.linalg.eigvalsh(F.half_square_hess(nu))
    return EllipticityProfile(
        mF=float(f.min()), MF=float(f.max()),
        lam=float(tang.min()), Lam=float(tang.max()),
        lamStar=float(star.min()), LamStar=float(star.max()),
        samples=int(sample_count))


def evaluate(F: Integrand, v):
    """Return (F(v), grad F(v), Hessian of F at v)."""
    return F.value(v), F.grad(v), F.hess(v)


def gauge(F: Integrand, x):
    return F.gauge(x)


def gauge_gradient(F: Integrand, x):
    return F.gauge_grad(x)


def cahn_hoffman(F: Integrand, xi):
    return F.half_square_grad(xi)


def duality_roundtrip_residual(F: Integrand, z):
    """Residuals of the two inverse-map identities at z.

    Returns ``(roundtrip, hessian)`` where roundtrip is
    |grad(F_*^2/2)(grad(F^2/2)(z)) - z| and hessian is the operator norm of
    hess(F^2/2)(z) hess(F_*^2/2)(grad F(z)) - Id.
    """
    F._check_smooth()
    z = _as_vectors(z, F.dim)
    _require_nonzero(z)
    y = F.half_square_grad(z)
    back = F.dual_half_square_grad(y)
    roundtrip = _norm(back - z)
    product = F.half_square_hess(z) @ F.dual_half_square_hess(F.grad(z))
    hessian = np.linalg.norm(product - np.eye(F.dim), ord=2, axis=(-2, -1))
    return roundtrip, hessian


class Dual(Integrand):
    """The gauge F_* viewed as an integrand in its own right."""

    def __init__(self, F: Integrand):
        super().__init__(F.dim)
        self.primal = F
        self.kind = f"dual-{F.kind}"
        self.smooth = F.smooth

    def value(self, nu):
        return self.primal.gauge(nu)

    def grad(self, nu):
        return self.primal.gauge_grad(nu)

    def hess(self, nu):
        return self.primal.gauge_hess(nu)

    def gauge_by_search(self, x):
        """(F_*)_* computed by maximisation, never by returning F."""
        return self._numeric_gauge(x)[0]

    def _coarse_directions(self):
        return fibonacci_sphere(2 ** 10 if self.dim == 2 else 2 ** 12, self.dim)


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

SQUARE = {"kind": "crystal", "params": {"normals": [[1, 0], [0, 1], [-1, 0], [0, -1]],
                                        "weights": [1, 1, 1, 1]}}


@dataclass
class IntegrandFamily:
    members: list
    epsilons: list
    limit_descriptor: dict
    m: float
    M: float
    ellipticity_trace: list = field(default_factory=list)

    def limit(self, nu):
        if self.limit_descriptor["kind"] == "crystal":
            return self.members[0].limit(nu)
        return self.members[0].value(nu)

    def to_json(self):
        return {"limitDescriptor": self.limit_descriptor, "epsilons": list(self.epsilons),
                "m": self.m, "M": self.M,
                "ellipticityTrace": [p.to_json() for p in self.ellipticity_trace]}


def build_family(limit_descriptor: dict, epsilons, sample_count: int = 512) -> IntegrandFamily:
    """Smooth elliptic approximations of a limit integrand, one per epsilon."""
    epsilons = [float(e) for e in epsilons]
    if not epsilons or any(e <= 0.0 for e in epsilons):
        raise ValueError("smoothing parameters must be positive")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("smoothing parameters must be strictly decreasing")
    kind = limit_descriptor.get("kind")
    params = limit_descriptor.get("params", {})
    if kind == "crystal":
        members = [SmoothedCrystal(params["normals"], params.get("weights"), eps) for eps in epsilons]
    elif kind in ("isotropic", "ellipse", "pnorm", "tabulated"):
        base = make_integrand(limit_descriptor)
        members = [base for _ in epsilons]
    else:
        raise ValueError(f"unknown limit descriptor kind {kind!r}")
    dim = members[0].dim
    count = max(sample_count, 64 if dim == 2 else 1024)
    trace = [ellipticity_estimate(F, count) for F in members]
    if min(p.mF for p in trace) <= 0.0:
        raise ValueError("limit descriptor is not positive on the sphere")
    return IntegrandFamily(members=members, epsilons=epsilons, limit_descriptor=limit_descriptor,
                           m=min(p.mF for p in trace), M=max(p.MF for p in trace),
                           ellipticity_trace=trace)


def make_integrand(spec: dict) -> Integrand:
    """Build an integrand from its JSON description ``{"kind", "params"}``."""
    kind = spec.get("kind")
    params = dict(spec.get("params", {}))
    dim = int(spec.get("dim", params.pop("dim", 2)))
    if kind == "isotropic":
        return Isotropic(dim)
    if kind == "ellipse":
        return Ellipse(params["axes"])
    if kind == "pnorm":
        return PNorm(params["p"], dim)
    if kind == "crystal":
        return SmoothedCrystal(params["normals"], params.get("weights"), params.get("eps", 0.1))
    if kind == "tabulated":
        return TabulatedSupport(params["support"], params.get("angles"))
    raise ValueError(f"unknown integrand kind {kind!r}; expected one of {KINDS}")
