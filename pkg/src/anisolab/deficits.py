"""Deficits, inequality sides and moment identities for a domain and its torsion potential."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import grid as gridlib
from .domain import (LevelSetDomain, aniso_mean_curvature, node_volumes,
                     reference_curvature, surface_energy, volume)
from .integrand import Integrand
from .torsion import TorsionSolution, lipschitz_check, reilly_gap
from .wulff import WulffShape

DEFAULT_ALPHAS = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)


class NotApplicable(ValueError):
    """A quantity whose hypotheses fail on the given domain."""


def _boundary_terms(D: LevelSetDomain, F: Integrand):
    B = D.boundary
    return B, F.value(B.normals), aniso_mean_curvature(D, F)


# ---------------------------------------------------------------------------
# curvature deficits
# ---------------------------------------------------------------------------

def delta_F(D: LevelSetDomain, F: Integrand) -> float:
    """Scale-invariant L2 oscillation of H^F / H^{F,0} around 1, weighted by F(nu)."""
    B, f, H = _boundary_terms(D, F)
    H0 = reference_curvature(D, F)
    energy = B.integrate(f)
    return float(np.sqrt(B.integrate((H / H0 - 1.0) ** 2 * f) / energy))


def uniform_deficit(D: LevelSetDomain, F: Integrand) -> float:
    """Largest |H^F / H^{F,0} - 1| over the boundary samples."""
    H = aniso_mean_curvature(D, F)
    return float(np.max(np.abs(H / reference_curvature(D, F) - 1.0)))


def _require_positive(H):
    if np.any(H <= 0.0):
        raise NotApplicable("H^F not positive")


def hk_integral(D: LevelSetDomain, F: Integrand) -> float:
    """Boundary integral of n F(nu) / H^F."""
    B, f, H = _boundary_terms(D, F)
    _require_positive(H)
    return B.integrate((D.dim - 1) * f / H)


def eta_F(D: LevelSetDomain, F: Integrand) -> float:
    """Heintze-Karcher deficit; raises NotApplicable unless H^F > 0 on the boundary."""
    return float(1.0 - D.dim * volume(D) / hk_integral(D, F))


def hk_gap(D: LevelSetDomain, F: Integrand) -> float:
    return float(hk_integral(D, F) - D.dim * volume(D))


def curvature_ratio_floor(D: LevelSetDomain, F: Integrand) -> float:
    """Measured kappa: the smallest H^F / H^{F,0} over the boundary samples."""
    H = aniso_mean_curvature(D, F)
    return float(H.min() / reference_curvature(D, F))


# ---------------------------------------------------------------------------
# identities involving the torsion potential
# ---------------------------------------------------------------------------

@dataclass
class HKIdentity:
    lhsTimesFactor: float
    rhsSum: float
    residual: float


def _flux_terms(T: TorsionSolution):
    J = T.flux_jacobian()
    div = np.trace(J, axis1=-2, axis2=-1)
    trsq = np.einsum("...ij,...ji->...", J, J)
    return J, div, trsq


def _integrate(T: TorsionSolution, values) -> float:
    return float(np.sum(np.asarray(values) * T.nodeVolume))


def hk_identity_residual(D: LevelSetDomain, F: Integrand, T: TorsionSolution) -> HKIdentity:
    """Both sides of the identity relating the Heintze-Karcher gap to the torsion potential.

    The residual is |lhs - rhs| / ((n+1)^2 |Omega|^2).
    """
    n1 = D.dim
    B, f, H = _boundary_terms(D, F)
    _require_positive(H)
    vol = volume(D)
    lhs = vol / n1 * (B.integrate((n1 - 1) * f / H) - n1 * vol)
    _, div, trsq = _flux_terms(T)
    g, _ = T.boundary_fit()
    Fg = F.value(g)
    weight = B.integrate(f / H)
    trace_term = _integrate(T, trsq - div ** 2 / n1)
    variance = weight * B.integrate(H * Fg ** 2 * f) - B.integrate(Fg * f) ** 2
    rhs = weight * trace_term + variance
    return HKIdentity(float(lhs), float(rhs), float(abs(lhs - rhs) / (n1 ** 2 * vol ** 2)))


@dataclass
class EstimateSide:
    name: str
    lhsWithoutCn: float | None
    rhs: float | None
    ratio: float | None
    status: str = "ok"


def estimate_suite(D: LevelSetDomain, F: Integrand, T: TorsionSolution, kappa: float | None,
                   K: WulffShape) -> list:
    """The three torsion-potential estimates with their unknown constants dropped.

    Each entry holds the deficit side without C(n), the integral side, and
    ``ratio = rhs / lhs``.  The two volume integrals are always evaluated;
    their deficit sides need eta_F and are left empty when H^F is not
    positive.  The boundary estimate needs deltaF < 1/2 and kappa > 0.
    """
    n1 = D.dim
    n = n1 - 1
    vol = volume(D)
    prof = F.profile
    out = []
    try:
        eta = eta_F(D, F)
        missing = None
    except NotApplicable as exc:
        eta, missing = None, f"deficit side not applicable: {exc}"

    def entry(name, lhs, rhs):
        if eta is None:
            return EstimateSide(name, None, float(rhs), None, missing)
        ratio = rhs / lhs if lhs > 0.0 else None
        return EstimateSide(name, float(lhs), float(rhs), ratio)

    J, _, _ = _flux_terms(T)
    eye = np.eye(n1)
    dev = J - eye / n1
    rhs1 = _integrate(T, np.sum(dev * dev, axis=(-2, -1)))
    out.append(entry("flux-jacobian", prof.LamStar / prof.lamStar * vol * (eta or 0.0), rhs1))

    live = T.nodeVolume > 0.0
    target = np.zeros_like(T.hessU)
    grads = T.gradU[live]
    moving = np.linalg.norm(grads, axis=-1) > 0.0
    sub = np.zeros((int(live.sum()), n1, n1))
    sub[moving] = F.dual_half_square_hess(F.grad(grads[moving]))
    target[live] = sub / n1
    diff = T.hessU - target
    rhs1b = _integrate(T, np.sum(diff * diff, axis=(-2, -1)))
    out.append(entry("hessian", vol * (eta or 0.0) / prof.lamStar ** 2, rhs1b))

    delta = delta_F(D, F)
    if kappa is None:
        kappa = curvature_ratio_floor(D, F)
    if eta is None or not (delta < 0.5 and kappa > 0.0):
        out.append(EstimateSide("boundary-slope", None, None, None,
                                "not applicable: needs deltaF < 1/2 and kappa > 0"))
        return out
    B, f, H = _boundary_terms(D, F)
    H0 = reference_curvature(D, F)
    g, _ = T.boundary_fit()
    rhs2 = B.integrate(((n / H0) / n1 - F.value(g)) ** 2 * f)
    lhs2 = vol ** ((n + 2) / n1) / K.volume ** (1.0 / n1) / kappa * (eta + delta ** 2 / kappa)
    out.append(entry("boundary-slope", lhs2, rhs2))
    return out


def pohozaev_moments(T: TorsionSolution, F: Integrand, alphas=DEFAULT_ALPHAS):
    """Moments M_alpha = int F(grad u)^alpha and the recursion residuals.

    Returns ``(moments, residuals)`` where residuals[i] compares alphas[i] with
    alphas[i] + 1 whenever that exponent is also in the list.
    """
    n1 = T.domain.dim
    moving = (T.nodeVolume > 0.0) & (np.linalg.norm(T.gradU, axis=-1) > 0.0)
    slope = np.zeros(T.u.shape)
    slope[moving] = F.value(T.gradU[moving])
    moments = {}
    for a in alphas:
        a = float(a)
        vals = np.ones_like(slope) if a == 0.0 else slope ** a
        moments[a] = _integrate(T, vals)
    residuals = {}
    for a in moments:
        if a + 1.0 in moments:
            residuals[a] = abs((n1 + a) * moments[a] / n1 ** 2
                               - (n1 + 1 + a) * moments[a + 1.0] / n1)
    return moments, residuals


# ---------------------------------------------------------------------------
# bubbles
# ---------------------------------------------------------------------------

@dataclass
class BubbleEstimate:
    count: int | None
    radii: list
    residual: float
    status: str = "ok"


def bubble_targets(moments: dict, K: WulffShape) -> dict:
    """Normalised moments M_a (n+1)^a (n+1+a) / C_K, equal to sum_j s_j^(n+1+a)."""
    n1 = K.dim
    C = K.momentConstant
    return {float(a): m * n1 ** a * (n1 + a) / C for a, m in moments.items()}


def forward_moments(radii, alphas, K: WulffShape) -> dict:
    n1 = K.dim
    C = K.momentConstant
    radii = np.asarray(radii, dtype=float)
    return {float(a): C / (n1 ** a * (n1 + a)) * float(np.sum(radii ** (n1 + a))) for a in alphas}


def bubble_recovery(moments: dict, F: Integrand, K: WulffShape, max_count: int = 4,
                    threshold: float = 1e-2) -> BubbleEstimate:
    """Fit a union of Wulff shapes of radii s_j to the torsion moments.

    For L = 1, 2, ... the radii minimise the relative misfit of
    sum_j s_j^(n+1+a) against the normalised moments; the smallest L whose
    RMS relative misfit is below ``threshold`` wins.
    """
    if F.dim != K.dim:
        raise ValueError("integrand and Wulff shape dimensions differ")
    targets = bubble_targets(moments, K)
    alphas = np.array(sorted(targets))
    y = np.array([targets[a] for a in alphas])
    if np.any(y <= 0.0):
        raise ValueError("moments must be positive")
    n1 = K.dim
    best = None
    for L in range(1, max_count + 1):
        if len(alphas) < L + 1:
            break

        def misfit(logs):
            s = np.exp(logs)
            model = np.sum(s[None, :] ** (n1 + alphas[:, None]), axis=1)
            return model / y - 1.0

        # start points: equal radii matching the volume, plus a spread grid
        base = (y[0] / L) ** (1.0 / n1)
        starts = [np.full(L, np.log(base))]
        for combo in itertools.product((0.4, 0.7, 1.0, 1.3), repeat=L):
            if list(combo) == sorted(combo, reverse=True):
                starts.append(np.log(np.asarray(combo) * base))
        fit = None
        for x0 in starts:
            res = least_squares(misfit, x0, xtol=1e-14, ftol=1e-14, gtol=1e-14)
            if fit is None or res.cost < fit.cost:
                fit = res
        rms = float(np.sqrt(np.mean(misfit(fit.x) ** 2)))
        radii = sorted(np.exp(fit.x).tolist(), reverse=True)
        if best is None or rms < best.residual:
            best = BubbleEstimate(L, radii, rms)
        if rms < threshold:
            return BubbleEstimate(L, radii, rms)
    return BubbleEstimate(None, best.radii if best else [], best.residual if best else np.inf,
                          "no bubble structure")


# ---------------------------------------------------------------------------
# Wulff deficit and asymmetry
# ---------------------------------------------------------------------------

def wulff_deficit(D: LevelSetDomain, F: Integrand, K: WulffShape) -> float:
    n1 = D.dim
    vol = volume(D)
    return float(surface_energy(D, F) / (n1 * K.volume ** (1.0 / n1) * vol ** ((n1 - 1) / n1)) - 1.0)


def _centroid(D: LevelSetDomain) -> np.ndarray:
    w = node_volumes(D)
    X = D.grid.coords()
    return np.tensordot(w, X, axes=(tuple(range(D.dim)), tuple(range(D.dim)))) / w.sum()


def asymmetry_index(D: LevelSetDomain, F: Integrand, K: WulffShape, levels: int = 3,
                    return_center: bool = False):
    """min over p of |Omega sym-diff (p + s K_F)| / |Omega| with s fixing the volume.

    The Wulff level set is sampled once on a padded copy of the domain grid
    and shifted by interpolation; the search starts at the centroid and
    refines a (5^d)-point pattern three times.
    """
    vol = volume(D)
    s = (vol / K.volume) ** (1.0 / D.dim)
    h = D.spacing
    centre = _centroid(D)
    pad = 8
    big = gridlib.Grid(tuple(np.asarray(D.grid.origin) - pad * h), h,
                       tuple(n + 2 * pad for n in D.grid.shape))
    # level set of s K_F centred at the centroid, on the padded lattice
    template = s * (F.gauge((big.coords() - centre) / s) - 1.0)
    base = D.grid.coords()

    def sym_diff(p):
        shifted = base - (p - centre)
        wphi = gridlib.interpolate(big, template, shifted.reshape(-1, D.dim)).reshape(D.phi.shape)
        both = gridlib.volume(np.maximum(D.phi, wphi), h)
        return vol + gridlib.volume(wphi, h) - 2.0 * both

    best_p, best = centre, sym_diff(centre)
    step = 0.1 * s
    for _ in range(levels):
        for off in itertools.product(range(-2, 3), repeat=D.dim):
            p = best_p + step * np.asarray(off, dtype=float)
            val = sym_diff(p)
            if val < best:
                best, best_p = val, p
        step /= 4.0
    out = float(best / vol)
    return (out, best_p) if return_center else out


# ---------------------------------------------------------------------------
# capillarity
# ---------------------------------------------------------------------------

def capillarity_multiplier(D: LevelSetDomain, F: Integrand, g):
    """Lagrange multiplier of the volume-constrained energy and the criticality misfit.

    ``g`` maps an array of points ``(..., d)`` to potential values.  Returns
    ``(ell, criticalResidual)`` with ell = H^{F,0} + int div(g x) / ((n+1)|Omega|)
    and the residual the F(nu)-weighted RMS of H^F + g - ell on the boundary.
    """
    X = D.grid.coords()
    field_ = np.asarray(g(X), dtype=float)[..., None] * X
    div = gridlib.divergence(field_, D.spacing)
    vol = volume(D)
    integral = float(np.sum(div * node_volumes(D)))
    ell = reference_curvature(D, F) + integral / (D.dim * vol)
    B, f, H = _boundary_terms(D, F)
    misfit = H + np.asarray(g(B.points), dtype=float) - ell
    resid = float(np.sqrt(B.integrate(misfit ** 2 * f) / B.integrate(f)))
    return float(ell), resid


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class DeficitReport:
    deltaF: float
    etaF: float | None
    deltaW: float
    hkGap: float | None
    reillyGap: dict | None
    estimateSides: list
    moments: dict
    bubbles: dict | None
    asymmetry: float
    kappa: float
    uniformDeficit: float
    hkIdentityResidual: float | None = None
    pohozaevResiduals: dict = field(default_factory=dict)
    normalizedMoments: dict = field(default_factory=dict)
    lipschitz: dict | None = None
    status: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        for key in ("moments", "pohozaevResiduals", "normalizedMoments"):
            out[key] = [{"alpha": a, "value": v} for a, v in sorted(getattr(self, key).items())]
        return out


def deficit_report(D: LevelSetDomain, F: Integrand, K: WulffShape, T: TorsionSolution | None = None,
                   alphas=DEFAULT_ALPHAS, bubbles: bool = True) -> DeficitReport:
    status = {}
    kappa = curvature_ratio_floor(D, F)
    try:
        eta = eta_F(D, F)
        gap = hk_gap(D, F)
    except NotApplicable as exc:
        eta, gap = None, None
        status["etaF"] = str(exc)
    reilly = identity = lipschitz = None
    sides = []
    moments, pohozaev, normalized = {}, {}, {}
    bubble = None
    if T is not None:
        if eta is not None:
            identity = hk_identity_residual(D, F, T).residual
        lipschitz = lipschitz_check(T, D, F).to_json()
        lhs, rhs, g = reilly_gap(T, D, F)
        reilly = {"lhs": lhs, "rhs": rhs, "gap": g, "relative": abs(g) / max(abs(rhs), 1e-300)}
        sides = [asdict(e) for e in estimate_suite(D, F, T, kappa if kappa > 0 else None, K)]
        moments, pohozaev = pohozaev_moments(T, F, alphas)
        normalized = bubble_targets(moments, K)
        if bubbles:
            bubble = asdict(bubble_recovery(moments, F, K))
    return DeficitReport(
        deltaF=delta_F(D, F), etaF=eta, deltaW=wulff_deficit(D, F, K), hkGap=gap,
        reillyGap=reilly, estimateSides=sides, moments=moments, bubbles=bubble,
        asymmetry=asymmetry_index(D, F, K), kappa=kappa,
        uniformDeficit=uniform_deficit(D, F), hkIdentityResidual=identity,
        pohozaevResiduals=pohozaev, normalizedMoments=normalized, lipschitz=lipschitz,
        status=status)
