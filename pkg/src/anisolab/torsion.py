"""Anisotropic torsion potential: Delta_F u = 1 in Omega, u = 0 outside.

The potential minimises a discrete version of ``int F^2(grad u)/2 + u`` over
the values at inside nodes.  Every grid cell contributes one gradient sample
per inside corner, built from the cell edges leaving that corner, and every
sample carries the weight h^d / 2^d.  An edge that leaves the domain ends at
its boundary crossing, a fraction theta of the edge away, where u = 0.  Its
one-sided difference is multiplied by sqrt(2 theta), so for the Euclidean
integrand the energy reproduces the symmetric ghost-fluid discretisation of
the Laplacian.  That scheme is second-order accurate for smooth boundaries."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy.spatial import cKDTree

from . import grid as gridlib
from .domain import LevelSetDomain, aniso_mean_curvature, node_volumes
from .integrand import Integrand, nested_sphere_sample

#: smallest admissible crossing fraction on a cut edge
MIN_CUT = 1e-3


class ConvergenceError(RuntimeError):
    """Raised when the solver exhausts its iteration budget."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_iters: int = 200_000
    restart_every: int = 100
    critical_fraction: float = 1e-3


@dataclass
class TorsionSolution:
    """Solved potential and everything derived from it.

    ``gradU`` and ``cahnHoffmanField`` are extended a few cells past the
    boundary by local quadratic fits so that they can be interpolated at
    boundary samples; ``u`` itself is zero outside.
    """

    domain: LevelSetDomain
    integrand: Integrand
    u: np.ndarray
    gradU: np.ndarray
    cahnHoffmanField: np.ndarray
    hessU: np.ndarray
    energy: float
    residualNorm: float
    criticalSetMask: np.ndarray
    nodeVolume: np.ndarray
    iterations: int
    energyTrace: list = field(default_factory=list)
    wallTime: float = 0.0
    flaggedNodes: int = 0

    @property
    def inside(self) -> np.ndarray:
        return self.domain.inside

    @property
    def supGrad(self) -> float:
        return float(np.linalg.norm(self.gradU[self.inside], axis=-1).max())

    def flux_jacobian(self) -> np.ndarray:
        """grad(grad_F u) at every node, chain rule away from the critical set."""
        return _flux_jacobian(self)

    def boundary_fit(self):
        """(grad u, hess u) at the boundary samples from local quadratic fits."""
        return _boundary_fit(self)

    def to_json(self) -> dict:
        return {"energy": self.energy, "residualNorm": self.residualNorm,
                "iterations": self.iterations, "minU": float(self.u.min()),
                "supGrad": self.supGrad,
                "criticalFraction": float(self.criticalSetMask[self.inside].mean()),
                "flaggedNodes": self.flaggedNodes, "wallTime": self.wallTime}


# ---------------------------------------------------------------------------
# discretisation
# ---------------------------------------------------------------------------

@dataclass
class _Stencil:
    G: list            # per-axis sparse maps from unknowns to corner derivatives
    weight: np.ndarray  # corner weights
    load: np.ndarray    # nodal volumes of the unknowns
    index: np.ndarray   # grid node index -> unknown number (or -1)
    nodes: np.ndarray   # flat grid indices of the unknowns
    corner_node: np.ndarray


def _solvable_nodes(phi: np.ndarray) -> np.ndarray:
    """Inside nodes whose every cut edge reaches the boundary at least MIN_CUT away.

    Nodes closer than that are pinned to zero like outside nodes.  This moves
    the boundary by less than MIN_CUT * h and avoids the huge one-sided
    derivatives of almost degenerate edges.
    """
    inside = phi < 0.0
    ok = inside.copy()
    for axis in range(phi.ndim):
        for shift in (1, -1):
            pn = np.roll(phi, shift, axis=axis)
            cut = inside & (pn >= 0.0)
            theta = np.where(cut, phi / np.where(cut, phi - pn, -1.0), 1.0)
            ok &= theta >= MIN_CUT
    return ok


def _build_stencil(D: LevelSetDomain) -> _Stencil:
    phi = D.phi
    h = D.spacing
    d = D.dim
    inside = _solvable_nodes(phi)
    flat_inside = np.flatnonzero(inside)
    index = -np.ones(phi.size, dtype=np.int64)
    index[flat_inside] = np.arange(flat_inside.size)
    coords = np.array(np.unravel_index(flat_inside, phi.shape)).T
    rows = [[] for _ in range(d)]
    cols = [[] for _ in range(d)]
    vals = [[] for _ in range(d)]
    owners = []
    count = 0
    m = len(coords)
    # a corner sample is (inside node, octant); the octant gives the direction
    # of the cell along every axis
    for octant in np.ndindex(*(2,) * d):
        signs = np.where(np.array(octant) == 1, 1, -1)
        sample = count + np.arange(m)
        for k in range(d):
            step = np.zeros(d, dtype=int)
            step[k] = signs[k]
            nb = np.ravel_multi_index((coords + step).T, phi.shape)
            nb_in = inside.ravel()[nb]
            pc = phi.ravel()[flat_inside]
            pn = phi.ravel()[nb]
            # crossing fraction of a cut edge; a pinned inside neighbour acts
            # as a boundary point at full distance
            cut = ~nb_in & (pn >= 0.0)
            theta = np.where(cut, pc / np.where(cut, pc - pn, -1.0), 1.0)
            theta = np.clip(theta, MIN_CUT, 1.0)
            own = np.where(nb_in, 1.0, np.sqrt(2.0 * theta) / theta)
            # derivative along +axis is signs[k] * (u_nb - u_me) / h on full edges
            rows[k].append(sample)
            cols[k].append(index[flat_inside])
            vals[k].append(-signs[k] * own / h)
            rows[k].append(sample[nb_in])
            cols[k].append(index[nb[nb_in]])
            vals[k].append(np.full(int(nb_in.sum()), signs[k] / h))
        owners.append(np.arange(m))
        count += m
    G = [sparse.csr_matrix((np.concatenate(vals[k]), (np.concatenate(rows[k]), np.concatenate(cols[k]))),
                           shape=(count, m)) for k in range(d)]
    weight = np.full(count, h ** d / 2 ** d)
    owner = np.concatenate(owners)
    load = np.full(m, float(h ** d))
    return _Stencil(G, weight, load, index, flat_inside, owner)


def _reference_tensor(F: Integrand) -> np.ndarray:
    nu = nested_sphere_sample(256 if F.dim == 2 else 2048, F.dim)
    A = F.half_square_hess(nu).mean(axis=0)
    return 0.5 * (A + A.T)


class _Energy:
    def __init__(self, S: _Stencil, F: Integrand):
        self.S = S
        self.F = F
        self.d = len(S.G)
        self.GT = [g.T.tocsr() for g in S.G]

    def grads(self, u):
        return np.stack([g @ u for g in self.S.G], axis=-1)

    def value(self, u):
        xi = self.grads(u)
        return float(0.5 * np.sum(self.S.weight * self.F.value(xi) ** 2) + self.S.load @ u)

    def value_and_gradient(self, u):
        xi = self.grads(u)
        f = self.F.value(xi)
        flux = self.F.half_square_grad(xi) * self.S.weight[:, None]
        grad = sum(self.GT[k] @ flux[:, k] for k in range(self.d)) + self.S.load
        return float(0.5 * np.sum(self.S.weight * f ** 2) + self.S.load @ u), grad

    def hessian_apply(self, u, v):
        xi = self.grads(u)
        B = self.F.half_square_hess(xi)
        gv = self.grads(v)
        flux = np.einsum("nij,nj->ni", B, gv) * self.S.weight[:, None]
        return sum(self.GT[k] @ flux[:, k] for k in range(self.d))


def _preconditioner(S: _Stencil, A: np.ndarray):
    d = len(S.G)
    W = sparse.diags(S.weight)
    P = None
    for k in range(d):
        for l in range(d):
            if A[k, l] == 0.0:
                continue
            term = A[k, l] * (S.G[k].T @ W @ S.G[l])
            P = term if P is None else P + term
    P = sparse.csc_matrix(P)
    return splinalg.splu(P, permc_spec="COLAMD")


def _power_estimate(energy: _Energy, solve, u, iterations=12, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(u.size)
    v /= np.linalg.norm(v)
    est = 1.0
    for _ in range(iterations):
        w = solve(energy.hessian_apply(u, v))
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 1.0
        v = w / est
    return est


def solve_torsion(D: LevelSetDomain, F: Integrand, cfg: SolverConfig | None = None) -> TorsionSolution:
    """Minimise the discrete torsion energy with preconditioned accelerated descent.

    The preconditioner is the same discrete energy with F^2/2 replaced by the
    quadratic form of its sphere-averaged Hessian, factorised once.  The step
    is 1/L with L a power-method estimate of the preconditioned Hessian norm,
    refreshed every ``cfg.restart_every`` iterations and increased whenever a
    step fails to decrease the energy.  Iteration stops when the sup norm of
    the preconditioned gradient, relative to the sup norm of u, falls below
    ``cfg.tol``.
    """
    cfg = cfg or SolverConfig()
    F._check_smooth()
    start = time.perf_counter()
    S = _build_stencil(D)
    energy = _Energy(S, F)
    lu = _preconditioner(S, _reference_tensor(F))
    solve = lu.solve

    u = solve(-S.load)  # exact for quadratic F^2/2
    E, g = energy.value_and_gradient(u)
    trace = [E]
    L = 1.05 * _power_estimate(energy, solve, u)
    y, u_prev, t = u.copy(), u.copy(), 1.0
    residual = np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        Ey, gy = energy.value_and_gradient(y)
        step = solve(gy)
        residual = float(np.abs(step).max() / max(np.abs(y).max(), 1e-300))
        if residual <= cfg.tol and Ey <= E:
            u, E = y, Ey
            break
        cand = y - step / L
        Ec = energy.value(cand)
        if Ec > E:
            # momentum overshoot: restart from the last accepted iterate
            E_u, g_u = energy.value_and_gradient(u)
            step = solve(g_u)
            cand = u - step / L
            Ec = energy.value(cand)
            while Ec > E_u and L < 1e12:
                L *= 2.0
                cand = u - step / L
                Ec = energy.value(cand)
            t = 1.0
            u_prev, u = u, cand
            y = u.copy()
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            u_prev, u = u, cand
            y = u + ((t - 1.0) / t_next) * (u - u_prev)
            t = t_next
        E = Ec
        trace.append(E)
        if it % cfg.restart_every == 0:
            L = max(1.05 * _power_estimate(energy, solve, u, seed=it), 1.0)
    else:
        raise ConvergenceError(f"torsion solver did not converge in {cfg.max_iters} iterations "
                               f"(residual {residual:.3e})", trace)

    field_u = np.zeros(D.phi.shape)
    field_u.ravel()[S.nodes] = u
    return _postprocess(D, F, S, energy, field_u, u, E, residual, it, trace,
                        time.perf_counter() - start, cfg)


def torsion_from_field(D: LevelSetDomain, F: Integrand, field_u: np.ndarray,
                       cfg: SolverConfig | None = None) -> TorsionSolution:
    """Rebuild a TorsionSolution from a stored node field without solving.

    The residual is re-evaluated from the discrete energy, so a field that
    was not produced by ``solve_torsion`` on the same domain shows up with a
    large ``residualNorm``.
    """
    cfg = cfg or SolverConfig()
    F._check_smooth()
    field_u = np.asarray(field_u, dtype=float)
    if field_u.shape != D.phi.shape:
        raise ValueError(f"field shape {field_u.shape} does not match the domain grid {D.phi.shape}")
    S = _build_stencil(D)
    energy = _Energy(S, F)
    u = field_u.ravel()[S.nodes].copy()
    E, g = energy.value_and_gradient(u)
    step = _preconditioner(S, _reference_tensor(F)).solve(g)
    residual = float(np.abs(step).max() / max(np.abs(u).max(), 1e-300))
    clean = np.zeros(D.phi.shape)
    clean.ravel()[S.nodes] = u
    return _postprocess(D, F, S, energy, clean, u, E, residual, 0, [E], 0.0, cfg)


# ---------------------------------------------------------------------------
# derived fields
# ---------------------------------------------------------------------------

def _quadratic_basis(offsets: np.ndarray) -> np.ndarray:
    d = offsets.shape[-1]
    cols = [np.ones(offsets.shape[:-1])] + [offsets[..., k] for k in range(d)]
    for a in range(d):
        for b in range(a, d):
            cols.append(offsets[..., a] * offsets[..., b] * (0.5 if a == b else 1.0))
    return np.stack(cols, axis=-1)


def _unpack_quadratic(coef: np.ndarray, d: int):
    value = coef[:, 0]
    grad = coef[:, 1:1 + d]
    hess = np.zeros((len(coef), d, d))
    c = 1 + d
    for a in range(d):
        for b in range(a, d):
            hess[:, a, b] = hess[:, b, a] = coef[:, c]
            c += 1
    return value, grad, hess


class _LocalFitter:
    """Weighted quadratic least-squares fits of u from inside nodes and u = 0 samples."""

    def __init__(self, D: LevelSetDomain, u_field: np.ndarray):
        self.D = D
        h = D.spacing
        coords = D.grid.coords().reshape(-1, D.dim)
        inside = D.inside.ravel()
        bpts = D.boundary.points
        self.points = np.concatenate([coords[inside], bpts])
        self.values = np.concatenate([u_field.ravel()[inside], np.zeros(len(bpts))])
        self.tree = cKDTree(self.points)
        self.h = h
        self.k = 16 if D.dim == 2 else 30

    def fit(self, targets: np.ndarray):
        targets = np.atleast_2d(targets)
        d = self.D.dim
        out_v, out_g, out_h = [], [], []
        for chunk in range(0, len(targets), 4096):
            x = targets[chunk:chunk + 4096]
            dist, idx = self.tree.query(x, k=self.k)
            off = (self.points[idx] - x[:, None, :]) / self.h
            A = _quadratic_basis(off)
            w = np.exp(-(dist / (1.5 * self.h)) ** 2)
            Aw = A * w[..., None]
            lhs = np.einsum("nkp,nkq->npq", Aw, A) + 1e-10 * np.eye(A.shape[-1])
            rhs = np.einsum("nkp,nk->np", Aw, self.values[idx])
            coef = np.linalg.solve(lhs, rhs[..., None])[..., 0]
            v, g, H = _unpack_quadratic(coef, d)
            out_v.append(v)
            out_g.append(g / self.h)
            out_h.append(H / self.h ** 2)
        return np.concatenate(out_v), np.concatenate(out_g), np.concatenate(out_h)


def _central_hessian(field: np.ndarray, h: float) -> np.ndarray:
    d = field.ndim
    out = np.zeros(field.shape + (d, d))
    for a in range(d):
        out[..., a, a] = (np.roll(field, -1, a) - 2 * field + np.roll(field, 1, a)) / h ** 2
        for b in range(a + 1, d):
            out[..., a, b] = out[..., b, a] = (
                np.roll(np.roll(field, -1, a), -1, b) - np.roll(np.roll(field, -1, a), 1, b)
                - np.roll(np.roll(field, 1, a), -1, b) + np.roll(np.roll(field, 1, a), 1, b)) / (4 * h * h)
    return out


def _postprocess(D, F, S, energy, field_u, u, E, residual, iterations, trace, wall, cfg):
    d = D.dim
    h = D.spacing
    inside = D.inside
    shape = D.phi.shape
    # Away from the boundary the node gradient is the mean of the forward and
    # backward corner differences, i.e. the central difference.  Near the
    # boundary one-sided differences over short cut edges amplify round-off,
    # so nodes there (and a few outside) use local quadratic fits.
    solvable = np.zeros(D.phi.size, dtype=bool)
    solvable[S.nodes] = True
    solvable = solvable.reshape(shape)
    full_block = solvable.copy()
    for off in np.ndindex(*(3,) * d):
        full_block &= np.roll(solvable, shift=tuple(1 - o for o in off), axis=tuple(range(d)))
    full_block &= D.phi < -2.0 * h
    gradU = gridlib.gradient(field_u, h)
    hessU = _central_hessian(field_u, h)
    band = (D.phi < 3.0 * h) & ~full_block
    gradU[~full_block] = 0.0
    hessU[~full_block] = 0.0
    fitter = _LocalFitter(D, field_u)
    band_flat = np.flatnonzero(band)
    _, fg, fH = fitter.fit(D.grid.coords().reshape(-1, d)[band_flat])
    gradU.reshape(-1, d)[band_flat] = fg
    hessU.reshape(-1, d, d)[band_flat] = fH

    grad_norm = np.linalg.norm(gradU, axis=-1)
    sup = float(grad_norm[inside].max())
    critical = inside & (grad_norm < cfg.critical_fraction * sup)
    flux = np.zeros(shape + (d,))
    live = full_block | band
    flux[live] = F.half_square_grad(gradU[live])
    sol = TorsionSolution(domain=D, integrand=F, u=field_u, gradU=gradU, cahnHoffmanField=flux,
                          hessU=hessU, energy=E, residualNorm=residual,
                          criticalSetMask=critical, nodeVolume=node_volumes(D),
                          iterations=iterations, energyTrace=list(trace), wallTime=wall,
                          flaggedNodes=int(critical.sum()))
    sol._fitter = fitter
    return sol


def _flux_jacobian(T: TorsionSolution) -> np.ndarray:
    d = T.domain.dim
    J = np.zeros(T.gradU.shape + (d,))
    live = (T.nodeVolume > 0.0) & ~T.criticalSetMask
    A = T.integrand.half_square_hess(T.gradU[live])
    J[live] = A @ T.hessU[live]
    if T.criticalSetMask.any():
        # the chain rule needs a direction; use one-sided differences of the flux
        fd = np.stack([gridlib.gradient(T.cahnHoffmanField[..., k], T.domain.spacing)
                       for k in range(d)], axis=-2)
        J[T.criticalSetMask] = fd[T.criticalSetMask]
    return J


def _boundary_fit(T: TorsionSolution):
    cache = getattr(T, "_boundary_cache", None)
    if cache is None:
        _, g, H = T._fitter.fit(T.domain.boundary.points)
        cache = (g, H)
        T._boundary_cache = cache
    return cache


def _integrate(T: TorsionSolution, values) -> float:
    """Integral over Omega of a node field defined on the inside and the first outside layer."""
    return float(np.sum(np.asarray(values) * T.nodeVolume))


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def _bump_values(points, centre, radius):
    r2 = np.sum((points - centre) ** 2, axis=-1) / radius ** 2
    val = np.zeros(len(points))
    grad = np.zeros_like(points)
    live = r2 < 1.0
    e = np.exp(-1.0 / (1.0 - r2[live]))
    val[live] = e
    dr2 = 2.0 * (points[live] - centre) / radius ** 2
    grad[live] = (-e / (1.0 - r2[live]) ** 2)[:, None] * dr2
    return val, grad


def weak_residual(T: TorsionSolution, test_field_count: int = 20, seed: int = 0,
                  centres=None, radii=None) -> float:
    """Largest normalised weak-form residual over random bump test functions.

    For each bump phi returns |int grad_F u . grad phi + int phi| / ||phi||_L2.
    Bumps are centred at random inside nodes with radius between a quarter and
    a half of the distance to the boundary unless ``centres``/``radii`` are given.
    """
    D = T.domain
    d = D.dim
    rng = np.random.default_rng(seed)
    coords = D.grid.coords().reshape(-1, d)
    inside = T.inside.ravel()
    if centres is None:
        depth = -D.phi.ravel()
        candidates = np.flatnonzero(depth > 6 * D.spacing)
        if len(candidates) == 0:
            candidates = np.flatnonzero(inside)
        pick = rng.choice(candidates, size=test_field_count, replace=True)
        centres = coords[pick]
        radii = depth[pick] * rng.uniform(0.25, 0.9, size=test_field_count)
    centres = np.atleast_2d(centres)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centres),))
    flux = T.cahnHoffmanField.reshape(-1, d)
    vol = T.nodeVolume.ravel()
    worst = 0.0
    for c, r in zip(centres, radii):
        val, grad = _bump_values(coords, c, r)
        lhs = np.sum((np.einsum("ni,ni->n", flux, grad) + val) * vol)
        norm = np.sqrt(np.sum(val ** 2 * vol))
        if norm > 0.0:
            worst = max(worst, abs(lhs) / norm)
    return float(worst)


@dataclass
class LipschitzCheck:
    supGrad: float
    bound: float | None
    satisfied: bool | None
    status: str = "ok"

    def to_json(self):
        return {"supGrad": self.supGrad, "bound": self.bound, "satisfied": self.satisfied,
                "status": self.status}


def lipschitz_check(T: TorsionSolution, D: LevelSetDomain, F: Integrand) -> LipschitzCheck:
    sup = T.supGrad
    H = aniso_mean_curvature(D, F)
    if H.min() <= 0.0:
        return LipschitzCheck(sup, None, None, "not applicable: H^F not positive")
    bound = 1.0 / (F.profile.mF * float(H.min()))
    return LipschitzCheck(sup, bound, bool(sup <= bound * (1.0 + 5.0 * D.spacing)))


def reilly_gap(T: TorsionSolution, D: LevelSetDomain, F: Integrand):
    """(lhs, rhs, gap) of the anisotropic Reilly identity."""
    J = T.flux_jacobian()
    div = np.trace(J, axis1=-2, axis2=-1)
    trsq = np.einsum("...ij,...ji->...", J, J)
    lhs = _integrate(T, div ** 2 - trsq)
    B = D.boundary
    g, _ = T.boundary_fit()
    H = aniso_mean_curvature(D, F)
    rhs = B.integrate(H * F.value(g) ** 2 * F.value(B.normals))
    return float(lhs), float(rhs), float(lhs - rhs)


def boundary_identity_check(T: TorsionSolution, D: LevelSetDomain, F: Integrand) -> float:
    """max |Delta_F u - hess u[grad F(grad u), grad F(grad u)] - F(grad u) H^F| on the boundary."""
    g, Hu = T.boundary_fit()
    A = F.half_square_hess(g)
    lap = np.trace(A @ Hu, axis1=-2, axis2=-1)
    cf = F.grad(g)
    quad = np.einsum("ni,nij,nj->n", cf, Hu, cf)
    H = aniso_mean_curvature(D, F)
    return float(np.max(np.abs(lap - quad - F.value(g) * H)))


def bernstein_divergence_check(V: np.ndarray, D: LevelSetDomain, div_tol: float = 1e-6,
                               depth_cells: float = 3.0) -> float:
    """Relative gap between int div S (as a boundary flux) and int (div V)^2 - tr((grad V)^2).

    ``V`` is a node field of shape ``grid.shape + (d,)`` defined in a band
    around the closure of the domain; S = (div V) V - grad V [V].  The
    precondition (constant divergence within ``div_tol``) is checked at nodes
    deeper than ``depth_cells`` cells inside.
    """
    h = D.spacing
    d = D.dim
    V = np.asarray(V, dtype=float)
    if V.shape != D.phi.shape + (d,):
        raise ValueError("vector field shape does not match the domain grid")
    J = np.stack([gridlib.gradient(V[..., k], h) for k in range(d)], axis=-2)  # J[i, j] = d_j V_i
    div = np.trace(J, axis1=-2, axis2=-1)
    deep = D.phi < -depth_cells * h
    if deep.any() and np.ptp(div[deep]) > div_tol:
        raise ValueError(f"divergence is not constant: spread {np.ptp(div[deep]):.3e} > {div_tol:.1e}")
    S = div[..., None] * V - np.einsum("...ij,...j->...i", J, V)
    B = D.boundary
    flux = B.integrate(np.sum(gridlib.interpolate(D.grid, S, B.points) * B.normals, axis=1))
    trsq = np.einsum("...ij,...ji->...", J, J)
    frac = gridlib.cell_fractions(D.phi)
    integrand = div ** 2 - trsq
    n = tuple(s - 1 for s in integrand.shape)
    cell_mean = np.mean([integrand[tuple(slice(o, o + m) for o, m in zip(off, n))]
                         for off in np.ndindex(*(2,) * d)], axis=0)
    bulk = float(np.sum(frac * cell_mean) * h ** d)
    scale = max(abs(flux), abs(bulk), float(frac.sum() * h ** d))
    return abs(flux - bulk) / scale


def comparison_check(inner: TorsionSolution, outer: TorsionSolution) -> float:
    """Largest violation of u_outer <= u_inner on the inner domain (0 if none).

    Both solutions must live on the same lattice; the outer grid must contain
    the inner one.
    """
    gi, go = inner.domain.grid, outer.domain.grid
    if gi.spacing != go.spacing:
        raise ValueError("comparison needs a common spacing")
    shift = np.rint((np.asarray(gi.origin) - np.asarray(go.origin)) / gi.spacing).astype(int)
    if np.any(shift < 0) or np.any(shift + np.array(gi.shape) > np.array(go.shape)):
        raise ValueError("outer grid does not contain the inner grid")
    window = tuple(slice(s, s + n) for s, n in zip(shift, gi.shape))
    uo = outer.u[window]
    diff = uo - inner.u
    return float(max(0.0, diff[inner.inside].max()))
