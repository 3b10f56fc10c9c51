"""Scenario runner: sweeps over shape families, assertions and report files.

Each scenario turns a ScenarioConfig into a RunReport whose assertions read
only from the per-shape deficit records and geometry summaries.  Sweep
members are independent and can run in a process pool; results are merged
in sweep order, so reports do not depend on the number of workers.
"""
from __future__ import annotations

import csv
import hashlib
import io as _stdio
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from . import __version__
from . import grid as gridlib
from .capillarity import FlowError, capillarity_flow, make_potential
from .deficits import deficit_report
from .domain import (EmptyBoundaryError, LevelSetDomain, build_domain, describe,
                     reference_curvature, surface_energy, symmetric_difference, volume)
from .integrand import build_family, make_integrand
from .io import dumps, load_json, to_plain
from .schema import validate_report
from .torsion import ConvergenceError, solve_torsion, weak_residual
from .wulff import build_wulff, wulff_energy

SCENARIOS = ("wulff-validation", "bubbling", "degenerating-ellipticity", "capillarity-flow")

CSV_COLUMNS = ("label", "parameter", "spacing", "volume", "surfaceEnergy", "diameter",
               "referenceCurvature", "deltaF", "etaF", "deltaW", "hkGap", "reillyGapRelative",
               "hkIdentityResidual", "asymmetry", "kappa", "uniformDeficit", "bubbleCount",
               "flags")

# zero-target floors at the reference spacing 1/128; they scale linearly with h
WULFF_FLOORS = {"deltaF": 3e-2, "etaF": 3e-2, "deltaW": 2e-2, "hkIdentityResidual": 5e-2,
                "reillyGap": 5e-2, "asymmetry": 2e-2, "momentIdentity": 2e-2,
                "pohozaev": 2e-2, "torsionError": 5e-3}
FLOOR_REFERENCE_SPACING = 1.0 / 128.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a scenario run depends on.

    ``integrandSpec`` and ``domainSpec`` are inline JSON objects (paths are
    resolved by ``from_dict``).  ``sweep`` holds the scenario parameter
    (scales, neck widths, smoothing parameters or volume fractions) and
    ``gridSpacings`` the refinement ladder, coarsest first.
    """

    scenario: str
    integrandSpec: dict
    sweep: tuple
    gridSpacings: tuple
    domainSpec: dict | None = None
    outputs: dict = field(default_factory=dict)
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if len(self.sweep) == 0:
            raise ValueError("sweep must be nonempty")
        spacings = [float(h) for h in self.gridSpacings]
        if not spacings or any(h <= 0.0 for h in spacings):
            raise ValueError("grid spacings must be positive and nonempty")
        if any(b >= a for a, b in zip(spacings, spacings[1:])):
            raise ValueError("grid spacings must be strictly decreasing")
        object.__setattr__(self, "sweep", tuple(float(s) for s in self.sweep))
        object.__setattr__(self, "gridSpacings", tuple(spacings))

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "ScenarioConfig":
        known = {"scenario", "integrandSpec", "domainSpec", "sweep", "gridSpacings", "outputs",
                 "seed", "options"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        domain = data.get("domainSpec")
        return cls(scenario=data["scenario"],
                   integrandSpec=load_json(data["integrandSpec"], base),
                   domainSpec=None if domain is None else load_json(domain, base),
                   sweep=tuple(data["sweep"]), gridSpacings=tuple(data["gridSpacings"]),
                   outputs=dict(data.get("outputs", {})), seed=int(data.get("seed", 0)),
                   options=dict(data.get("options", {})))

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        return cls.from_dict(load_json(path), base=path.parent)

    def to_json(self) -> dict:
        return to_plain({"scenario": self.scenario, "integrandSpec": self.integrandSpec,
                         "domainSpec": self.domainSpec, "sweep": list(self.sweep),
                         "gridSpacings": list(self.gridSpacings), "outputs": self.outputs,
                         "seed": self.seed, "options": self.options})

    @property
    def configHash(self) -> str:
        return hashlib.sha256(dumps(self.to_json()).encode("utf-8")).hexdigest()


@dataclass
class RunReport:
    scenario: str
    config: ScenarioConfig
    perShape: list
    trends: dict
    assertions: list
    wallTime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    @property
    def failures(self) -> list:
        return [a["name"] for a in self.assertions if not a["passed"]]

    def provenance(self, include_timing: bool = False) -> dict:
        out = {"configHash": self.config.configHash, "versions": _versions(),
               "seed": self.config.seed}
        if include_timing:
            out["wallTime"] = self.wallTime
        return out

    def to_json(self, include_timing: bool = False) -> dict:
        return to_plain({"scenario": self.scenario, "config": self.config.to_json(),
                         "perShape": self.perShape, "trends": self.trends,
                         "assertions": self.assertions, "passed": self.passed,
                         "provenance": self.provenance(include_timing)})


def _versions() -> dict:
    out = {"python": platform.python_version(), "anisolab": __version__}
    for dist in ("numpy", "scipy", "scikit-image"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _geometry(D: LevelSetDomain, F) -> dict:
    summary = describe(D, F)
    return {k: summary[k] for k in ("dim", "volume", "surfaceEnergy", "diameter", "referenceCurvature",
                                    "components", "diameterIncludesGaps")}


def _entry(label, parameter, spacing, geometry=None, deficits=None, extra=None, flags=()):
    return to_plain({"label": label, "parameter": parameter, "spacing": spacing,
                     "geometry": geometry, "deficits": deficits, "extra": extra or {},
                     "flags": list(flags)})


def _assertion(name, value, threshold, passed=None, detail=""):
    if passed is None:
        passed = value is not None and bool(np.isfinite(value)) and value <= threshold
    return to_plain({"name": name, "passed": bool(passed), "value": value,
                     "threshold": threshold, "detail": detail})


def _trend(parameter, values, log_log=True) -> dict:
    x = np.asarray([np.nan if p is None else p for p in parameter], dtype=float)
    y = np.asarray([np.nan if v is None else v for v in values], dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    if log_log:
        ok &= (x > 0.0) & (y > 0.0)
    slope = None
    if ok.sum() >= 2 and np.ptp(x[ok]) > 0.0:
        xs, ys = (np.log(x[ok]), np.log(y[ok])) if log_log else (x[ok], y[ok])
        slope = float(np.polyfit(xs, ys, 1)[0])
    return to_plain({"parameter": list(parameter), "values": list(values), "slope": slope,
                     "logLog": log_log})


def _strictly_decreasing(values) -> bool:
    if any(v is None for v in values):
        return False
    return all(b < a for a, b in zip(values, values[1:]))


def _monotone_assertion(name, values, direction="decreasing"):
    seq = values if direction == "decreasing" else [None if v is None else -v for v in values]
    ok = len(values) >= 2 and _strictly_decreasing(seq)
    missing = sum(v is None for v in values)
    detail = f"strictly {direction} over the sweep"
    if missing:
        detail += f"; {missing} value(s) unavailable"
    return _assertion(name, None, None, passed=ok, detail=detail)


def _torsion_summary(T) -> dict:
    out = T.to_json()
    out.pop("wallTime", None)
    return out


# ---------------------------------------------------------------------------
# Wulff validation
# ---------------------------------------------------------------------------

def _wulff_member(args):
    Fspec, scale, h, seed = args
    F = make_integrand(Fspec)
    K = build_wulff(F, h)
    S = K if scale == 1.0 else build_wulff(F, h, scale=scale)
    D = S.domain
    T = solve_torsion(D, F)
    report = deficit_report(D, F, K, T)
    n1 = D.dim
    exact = (F.gauge(D.grid.coords() / scale) ** 2 - 1.0) * scale ** 2 / (2.0 * n1)
    inside = D.inside
    extra = {"torsion": _torsion_summary(T),
             "torsionError": float(np.abs(T.u - exact)[inside].max()),
             "weakResidual": weak_residual(T, seed=seed),
             "momentTargets": [{"alpha": a, "value": scale ** (n1 + a)}
                               for a in sorted(report.normalizedMoments)],
             "floorScale": 1.0}
    return _entry(f"wulff r={scale:g}", scale, h, _geometry(D, F), report.to_json(), extra)


def _floor_scale(F, spacing, options) -> float:
    ref = float(options.get("floorReferenceSpacing", FLOOR_REFERENCE_SPACING))
    scale = spacing / ref
    mode = options.get("floorScaling", "auto")
    if mode == "ellipticity" or (mode == "auto" and F.kind == "crystal"):
        scale *= F.profile.LamStar / F.profile.lamStar
    return scale


def _scaled_pohozaev(entry) -> float:
    """Largest relative recursion residual over alpha in {0, 1, 2} after rescaling to H^{F,0} = n.

    The recursion is stated for shapes normalised to H^{F,0} = n; for
    s K_F the moments scale like s^(n+1+alpha), with s = n / H^{F,0}.
    """
    n1 = entry["geometry"]["dim"]
    s = (n1 - 1) / entry["geometry"]["referenceCurvature"]
    M = {m["alpha"]: m["value"] / s ** (n1 + m["alpha"]) for m in entry["deficits"]["moments"]}
    worst = 0.0
    for a in (0.0, 1.0, 2.0):
        if a in M and a + 1.0 in M:
            r = abs((n1 + a) * M[a] / n1 ** 2 - (n1 + 1 + a) * M[a + 1.0] / n1)
            worst = max(worst, r / M[a])
    return worst


def _wulff_assertions(entry, floors, scale) -> list:
    d = entry["deficits"]
    x = entry["extra"]
    tag = f"[{entry['label']}, h={entry['spacing']:g}]"
    out = [
        _assertion(f"deltaF {tag}", d["deltaF"], floors["deltaF"] * scale),
        _assertion(f"etaF {tag}", None if d["etaF"] is None else abs(d["etaF"]),
                   floors["etaF"] * scale, detail=d["status"].get("etaF", "")),
        _assertion(f"deltaW {tag}", abs(d["deltaW"]), floors["deltaW"] * scale),
        _assertion(f"hkIdentityResidual {tag}", d["hkIdentityResidual"],
                   floors["hkIdentityResidual"] * scale),
        _assertion(f"reillyGap {tag}", d["reillyGap"]["relative"], floors["reillyGap"] * scale),
        _assertion(f"asymmetry {tag}", d["asymmetry"], floors["asymmetry"] * scale),
        _assertion(f"torsionError {tag}", x["torsionError"], floors["torsionError"] * scale),
    ]
    targets = {m["alpha"]: m["value"] for m in x["momentTargets"]}
    measured = {m["alpha"]: m["value"] for m in d["normalizedMoments"]}
    rel = max(abs(measured[a] / targets[a] - 1.0) for a in (0.0, 1.0, 2.0, 3.0) if a in measured)
    out.append(_assertion(f"momentIdentity {tag}", rel, floors["momentIdentity"] * scale))
    poh = _scaled_pohozaev(entry)
    out.append(_assertion(f"pohozaev {tag}", poh, floors["pohozaev"] * scale))
    lip = d["lipschitz"]
    out.append(_assertion(f"lipschitz {tag}", lip["supGrad"], lip["bound"],
                          passed=bool(lip["satisfied"]), detail=lip["status"]))
    return out


def run_wulff_validation(cfg: ScenarioConfig, jobs: int = 1) -> RunReport:
    """Wulff shapes at every scale and spacing: all zero-target metrics within their floors."""
    start = time.perf_counter()
    F = make_integrand(cfg.integrandSpec)
    if not F.smooth or F.profile.lam <= 0.0:
        raise ValueError("wulff validation needs a smooth elliptic integrand")
    items = [(cfg.integrandSpec, r, h, cfg.seed) for h in cfg.gridSpacings for r in cfg.sweep]
    entries = _map(_wulff_member, items, jobs)
    floors = dict(WULFF_FLOORS)
    floors.update(cfg.options.get("floors", {}))
    assertions = []
    for e in entries:
        scale = _floor_scale(F, e["spacing"], cfg.options)
        e["extra"]["floorScale"] = scale
        assertions.extend(_wulff_assertions(e, floors, scale))
    trends = {}
    for r in cfg.sweep:
        rows = [e for e in entries if e["parameter"] == r]
        hs = [e["spacing"] for e in rows]
        for key in ("deltaF", "asymmetry"):
            trends[f"{key} vs h (r={r:g})"] = _trend(hs, [e["deficits"][key] for e in rows])
        trends[f"reillyGap vs h (r={r:g})"] = _trend(
            hs, [e["deficits"]["reillyGap"]["relative"] for e in rows])
        trends[f"torsionError vs h (r={r:g})"] = _trend(hs, [e["extra"]["torsionError"] for e in rows])
    return RunReport(cfg.scenario, cfg, entries, trends, assertions, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# bubbling
# ---------------------------------------------------------------------------

def _inner_extent(F, heights, scale=1.0):
    """Largest t with F_*(-t e1 + y) <= scale for each transverse offset y, by bisection."""
    heights = np.atleast_2d(np.asarray(heights, dtype=float))
    d = heights.shape[1] + 1
    lo = np.zeros(len(heights))
    hi = np.full(len(heights), 2.0 * scale * F.profile.MF)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        pts = np.concatenate([-mid[:, None], heights], axis=1).reshape(-1, d)
        inside = F.gauge(pts) <= scale
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return lo


def neck_area_bound(F, width: float, gap: float, scale: float = 1.0, samples: int = 41) -> float:
    """Cross-section area times the longest stretch of the neck box outside both Wulff shapes.

    The neck box spans the two shape centres at +-(scale F(e1) + gap/2); at a
    transverse offset y the part outside the right shape has length
    centre - t(y) on either side of the midplane, with t(y) the inward extent
    of the shape at height y.
    """
    d = F.dim
    e1 = np.eye(d)[0]
    centre = scale * float(F.value(e1)) + 0.5 * gap
    axis = np.linspace(-0.5 * width, 0.5 * width, samples)
    heights = np.stack(np.meshgrid(*[axis] * (d - 1), indexing="ij"), axis=-1).reshape(-1, d - 1)
    t = _inner_extent(F, heights, scale)
    longest = float(np.max(2.0 * (centre - t)))
    return max(longest, 0.0) * width ** (d - 1)


def _bubbling_member(args):
    Fspec, w, gap, h = args
    F = make_integrand(Fspec)
    K = build_wulff(F, h)
    flags = []
    spec = {"type": "dumbbell", "neck_width": w, "gap": gap, "label": f"dumbbell w={w:g}"}
    try:
        D = build_domain(spec, h, integrand=F)
        e1 = np.eye(F.dim)[0]
        offset = float(F.value(e1)) + 0.5 * gap
        pair = {"type": "union", "members": [
            {"type": "wulff", "center": (-offset * e1).tolist()},
            {"type": "wulff", "center": (offset * e1).tolist()}]}
        ref = build_domain(pair, h, integrand=F, box=(D.grid.origin, D.grid.upper))
        T = solve_torsion(D, F)
        report = deficit_report(D, F, K, T)
    except (EmptyBoundaryError, ConvergenceError, ValueError) as exc:
        return _entry(spec["label"], w, h, flags=[f"skipped: {exc}"])
    extra = {"symmetricDifference": symmetric_difference(D, ref),
             "energyDifference": abs(surface_energy(D, F) - 2.0 * wulff_energy(K)),
             "neckAreaBound": neck_area_bound(F, w, gap),
             "gap": gap, "torsion": _torsion_summary(T)}
    if D.components != 1:
        flags.append(f"{D.components} components")
    return _entry(spec["label"], w, h, _geometry(D, F), report.to_json(), extra, flags)


def run_bubbling(cfg: ScenarioConfig, jobs: int = 1) -> RunReport:
    """Dumbbells of two unit Wulff shapes with shrinking necks.

    The gap between the shapes equals the neck width unless
    ``options["gap"]`` fixes it.
    """
    start = time.perf_counter()
    h = cfg.gridSpacings[-1]
    widths = sorted(cfg.sweep, reverse=True)
    gap = cfg.options.get("gap")
    items = [(cfg.integrandSpec, w, w if gap is None else float(gap), h) for w in widths]
    entries = _map(_bubbling_member, items, jobs)

    def series(getter):
        out = []
        for e in entries:
            try:
                out.append(getter(e))
            except (KeyError, TypeError):
                out.append(None)
        return out

    metrics = {
        "deltaF": series(lambda e: e["deficits"]["deltaF"]),
        "etaF": series(lambda e: e["deficits"]["etaF"]),
        "symmetricDifference": series(lambda e: e["extra"]["symmetricDifference"]),
        "energyDifference": series(lambda e: e["extra"]["energyDifference"]),
    }
    assertions = [_monotone_assertion(name, vals) for name, vals in metrics.items()]
    trends = {name: _trend(widths, vals) for name, vals in metrics.items()}
    last = entries[-1]
    if last["extra"]:
        bound = last["extra"]["neckAreaBound"]
        assertions.append(_assertion("symmetricDifference <= 3 neck area (smallest w)",
                                     last["extra"]["symmetricDifference"], 3.0 * bound))
    else:
        assertions.append(_assertion("symmetricDifference <= 3 neck area (smallest w)", None, None,
                                     passed=False, detail="; ".join(last["flags"])))
    bubbles = (last["deficits"] or {}).get("bubbles") or {}
    radii = bubbles.get("radii") or []
    tol = float(cfg.options.get("bubbleTolerance", 2e-2))
    ok = bubbles.get("count") == 2 and len(radii) == 2 and max(abs(s - 1.0) for s in radii) <= tol
    assertions.append(_assertion("bubble recovery L=2, s=(1,1) (smallest w)",
                                 bubbles.get("residual"), tol, passed=ok,
                                 detail=f"count={bubbles.get('count')}, radii={radii}"))
    return RunReport(cfg.scenario, cfg, entries, trends, assertions, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# degenerating ellipticity
# ---------------------------------------------------------------------------

def _polytope_phi(F, X):
    """max_i (n_i . x - w_i) / |n_i|: negative exactly inside the limit polytope."""
    normals = np.asarray(F.normals, dtype=float)
    lengths = np.linalg.norm(normals, axis=1)
    return np.max((X @ normals.T - F.weights) / lengths, axis=-1)


def _weighted(profile, eta):
    if eta is None:
        return None
    return max(1.0 / profile.lam ** 2, profile.Lam / profile.lam) * eta


def _degenerating_member(args):
    F, h, amplitude, mode, target, min_amplitude = args
    K = build_wulff(F, h)
    box = (K.grid.origin, K.grid.upper)
    X = K.grid.coords()
    limit = LevelSetDomain(K.grid, gridlib.reinitialize(_polytope_phi(F, X), h), label="limit")
    wulff_report = deficit_report(K.domain, F, K, bubbles=False)

    def perturbed(t):
        if mode == 0:
            stretch = np.ones(F.dim)
            stretch[:2] = (1.0 + t, 1.0 / (1.0 + t))
            spec = {"type": "wulff", "stretch": stretch.tolist(), "label": f"stretched t={t:g}"}
        else:
            spec = {"type": "perturbed", "base": {"type": "wulff"}, "amplitude": t, "mode": mode,
                    "label": f"perturbed t={t:g}"}
        D = build_domain(spec, h, integrand=F, box=box)
        return D, deficit_report(D, F, K, bubbles=False)

    prof = F.profile
    D_fixed, rep_fixed = perturbed(amplitude)
    fixed_weighted = _weighted(prof, rep_fixed.etaF)
    # shrink the amplitude until the weighted deficit meets the schedule; eta ~ t^2
    t, D_s, rep_s, weighted = amplitude, D_fixed, rep_fixed, fixed_weighted
    feasible = weighted is not None and weighted <= target
    for _ in range(8):
        if feasible or weighted is None or weighted <= 0.0:
            break
        t *= 0.9 * np.sqrt(target / weighted)
        if t < min_amplitude:
            # below this the discretisation floor of eta dominates the weighted deficit
            t = min_amplitude
            D_s, rep_s = perturbed(t)
            weighted = _weighted(prof, rep_s.etaF)
            feasible = weighted is not None and weighted <= target
            break
        D_s, rep_s = perturbed(t)
        weighted = _weighted(prof, rep_s.etaF)
        feasible = weighted is not None and weighted <= target
    limit_energy = D_s.dim * ConvexHull(F.vertices).volume
    extra = {
        "epsilon": F.eps,
        "ellipticity": {"lam": prof.lam, "Lam": prof.Lam, "lamStar": prof.lamStar,
                        "LamStar": prof.LamStar, "mF": prof.mF, "MF": prof.MF},
        "wulffLimitSymmetricDifference": symmetric_difference(K.domain, limit),
        "wulffDeficits": wulff_report.to_json(),
        "fixedAmplitude": amplitude,
        "fixedWeightedDeficit": fixed_weighted,
        "scheduleTarget": target,
        "scheduledAmplitude": t,
        "scheduledWeightedDeficit": weighted,
        "feasible": bool(feasible),
        "limitSymmetricDifference": symmetric_difference(D_s, limit),
        "energyGap": abs(surface_energy(D_s, F) - limit_energy),
        "limitEnergy": limit_energy,
    }
    flags = [] if feasible else ["schedule infeasible"]
    return _entry(f"crystal eps={F.eps:g}", F.eps, h, _geometry(D_s, F), rep_s.to_json(), extra,
                  flags)


def run_degenerating_ellipticity(cfg: ScenarioConfig, jobs: int = 1) -> RunReport:
    """Smoothed crystals approaching their polytope limit, with perturbations held to a schedule.

    ``integrandSpec`` describes the crystalline limit and ``sweep`` the
    smoothing parameters (strictly decreasing).  Options: ``amplitude`` and
    ``mode`` of the fixed perturbation (mode 0, the default, is the
    volume-preserving stretch by 1 + amplitude along the first axis, which
    keeps the shape convex; mode k > 0 is a radial cos(k theta) bump), ``schedule`` (one weighted-deficit
    target per member, default halving from ``scheduleStart``) and
    ``minAmplitude``, below which the schedule is declared infeasible.
    """
    start = time.perf_counter()
    family = build_family(cfg.integrandSpec, cfg.sweep)
    if cfg.integrandSpec.get("kind") != "crystal":
        raise ValueError("degenerating ellipticity needs a crystalline limit descriptor")
    h = cfg.gridSpacings[-1]
    amplitude = float(cfg.options.get("amplitude", 0.02))
    mode = int(cfg.options.get("mode", 0))
    schedule = cfg.options.get("schedule")
    if schedule is None:
        first = float(cfg.options.get("scheduleStart", 1.0))
        schedule = [first * 0.5 ** i for i in range(len(family.members))]
    if len(schedule) != len(family.members):
        raise ValueError("schedule needs one target per family member")
    min_amplitude = float(cfg.options.get("minAmplitude", 1e-3 * amplitude))
    items = [(F, h, amplitude, mode, float(s), min_amplitude)
             for F, s in zip(family.members, schedule)]
    entries = _map(_degenerating_member, items, jobs)
    eps = [e["parameter"] for e in entries]
    x = [e["extra"] for e in entries]
    metrics = {
        "wulffLimitSymmetricDifference": [v["wulffLimitSymmetricDifference"] for v in x],
        "limitSymmetricDifference": [v["limitSymmetricDifference"] for v in x],
        "energyGap": [v["energyGap"] for v in x],
    }
    assertions = [_monotone_assertion(name, vals) for name, vals in metrics.items()]
    assertions.append(_monotone_assertion("fixedWeightedDeficit grows as lambda decreases",
                                          [v["fixedWeightedDeficit"] for v in x], "increasing"))
    floors = dict(WULFF_FLOORS)
    floors.update(cfg.options.get("floors", {}))
    for e in entries:
        wd = e["extra"]["wulffDeficits"]
        F = family.members[eps.index(e["parameter"])]
        scale = _floor_scale(F, h, {**cfg.options, "floorScaling": "ellipticity"})
        tag = f"[{e['label']}]"
        assertions.append(_assertion(f"unperturbed deltaF {tag}", wd["deltaF"],
                                     floors["deltaF"] * scale))
        assertions.append(_assertion(f"unperturbed deltaW {tag}", abs(wd["deltaW"]),
                                     floors["deltaW"] * scale))
    trends = {name: _trend(eps, vals) for name, vals in metrics.items()}
    trends["weighted deficit (fixed amplitude)"] = _trend(eps, [v["fixedWeightedDeficit"] for v in x])
    trends["schedule"] = _trend(eps, [v["scheduleTarget"] for v in x])
    trends["lambda"] = _trend(eps, [v["ellipticity"]["lam"] for v in x])
    return RunReport(cfg.scenario, cfg, entries, trends, assertions, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# capillarity flow
# ---------------------------------------------------------------------------

def _capillarity_member(args):
    Fspec, domain_spec, potential_spec, fraction, h, options = args
    F = make_integrand(Fspec)
    K = build_wulff(F, h)
    n1 = F.dim
    if domain_spec is None:
        D0 = K.domain
    else:
        D0 = build_domain(domain_spec, h, integrand=F)
        # the box must also hold the Wulff shape of equal volume the flow heads for
        W = build_wulff(F, h, scale=(volume(D0) / K.volume) ** (1.0 / n1))
        lo = np.minimum(D0.grid.origin, W.grid.origin)
        hi = np.maximum(D0.grid.upper, W.grid.upper)
        D0 = build_domain(domain_spec, h, integrand=F, box=(lo, hi))
    # simulate the unit-size shape; the potential seen by it is r g(r y)
    r = (fraction * K.volume / volume(D0)) ** (1.0 / n1)
    potential = make_potential(potential_spec)
    g = potential.rescaled(r)
    label = f"volume {fraction:g} |K_F|"
    try:
        R = capillarity_flow(D0, F, g, tol=float(options.get("tol", 1e-3)),
                             max_steps=int(options.get("maxSteps", 20000)))
    except FlowError as exc:
        return _entry(label, fraction * K.volume, h, flags=[f"aborted: {exc}"],
                      extra={"fraction": fraction, "scale": r})
    D = R.domain
    report = deficit_report(D, F, K, bubbles=False)
    H0 = reference_curvature(D, F)
    extra = {"fraction": fraction, "scale": r, "flow": R.to_json(),
             "actualVolume": r ** n1 * volume(D),
             "ellActual": R.ell / r, "referenceCurvatureActual": H0 / r}
    if potential.kind == "constant":
        extra["multiplierMismatch"] = abs(R.ell / r - H0 / r - potential.value)
    flags = []
    if R.topologyChanged:
        flags.append("topology changed")
    if not R.converged:
        flags.append("stalled at discretisation floor" if R.stalled else "step budget exhausted")
    return _entry(label, r ** n1 * volume(D), h, _geometry(D, F), report.to_json(), extra, flags)


def run_capillarity_flow(cfg: ScenarioConfig, jobs: int = 1) -> RunReport:
    """Volume-preserving flow toward H^F + g = const for each volume fraction in the sweep.

    Options: ``potential`` (default constant 0), ``tol``, ``maxSteps``,
    ``asymmetryTolerance`` (default 3e-2), ``slopeTolerance`` (default
    0.15), ``multiplierTolerance`` (default 2e-2).  The initial shape is
    ``domainSpec`` if given, otherwise K_F; the flow runs at unit size with
    the rescaled potential and all volumes are reported at actual size.
    """
    start = time.perf_counter()
    h = cfg.gridSpacings[-1]
    potential_spec = cfg.options.get("potential", {"kind": "constant", "value": 0.0})
    make_potential(potential_spec)
    items = [(cfg.integrandSpec, cfg.domainSpec, potential_spec, v, h, cfg.options)
             for v in cfg.sweep]
    entries = _map(_capillarity_member, items, jobs)
    n1 = make_integrand(cfg.integrandSpec).dim
    assertions = []
    asym_tol = float(cfg.options.get("asymmetryTolerance", 3e-2))
    for e in entries:
        tag = f"[{e['label']}]"
        flow = e["extra"].get("flow")
        if flow is None:
            assertions.append(_assertion(f"volume drift {tag}", None, 1e-2, passed=False,
                                         detail="; ".join(e["flags"])))
            continue
        assertions.append(_assertion(f"volume drift {tag}", flow["volumeDrift"], 1e-2))
        assertions.append(_assertion(f"asymmetry {tag}", e["deficits"]["asymmetry"], asym_tol))
        if "multiplierMismatch" in e["extra"]:
            assertions.append(_assertion(f"multiplier {tag}", e["extra"]["multiplierMismatch"],
                                         float(cfg.options.get("multiplierTolerance", 2e-2))))
    volumes = [e["parameter"] for e in entries]
    deltas = [(e["deficits"] or {}).get("deltaF") for e in entries]
    trends = {"deltaF vs volume": _trend(volumes, deltas)}
    ratios = [d / v ** (1.0 / n1) for d, v in zip(deltas, volumes) if d is not None]
    trends["deltaF vs volume"]["constant"] = max(ratios) if ratios else None
    if make_potential(potential_spec).kind != "constant" and len(entries) >= 3:
        slope = trends["deltaF vs volume"]["slope"]
        tol = float(cfg.options.get("slopeTolerance", 0.15))
        err = None if slope is None else abs(slope - 1.0 / n1)
        assertions.append(_assertion("deltaF vs volume log-log slope", err, tol,
                                     detail=f"slope {slope} against 1/(n+1) = {1.0 / n1:g}"))
    return RunReport(cfg.scenario, cfg, entries, trends, assertions, time.perf_counter() - start)


RUNNERS = {"wulff-validation": run_wulff_validation, "bubbling": run_bubbling,
           "degenerating-ellipticity": run_degenerating_ellipticity,
           "capillarity-flow": run_capillarity_flow}


def run_scenario(cfg: ScenarioConfig, jobs: int = 1) -> RunReport:
    return RUNNERS[cfg.scenario](cfg, jobs=jobs)


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def csv_rows(report: RunReport) -> list:
    rows = []
    for e in report.perShape:
        geo = e["geometry"] or {}
        d = e["deficits"] or {}
        reilly = d.get("reillyGap") or {}
        bubbles = d.get("bubbles") or {}
        row = {"label": e["label"], "parameter": e["parameter"], "spacing": e["spacing"],
               "reillyGapRelative": reilly.get("relative"), "bubbleCount": bubbles.get("count"),
               "flags": "; ".join(e["flags"])}
        for key in ("volume", "surfaceEnergy", "diameter", "referenceCurvature"):
            row[key] = geo.get(key)
        for key in ("deltaF", "etaF", "deltaW", "hkGap", "hkIdentityResidual", "asymmetry",
                    "kappa", "uniformDeficit"):
            row[key] = d.get(key)
        rows.append([_csv_value(row[c]) for c in CSV_COLUMNS])
    return rows


def render_csv(report: RunReport) -> str:
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(csv_rows(report))
    return buf.getvalue()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
            "#7f7f7f")


def render_svg(report: RunReport, width: int = 640, height: int = 400) -> str:
    """Log-log line plot with one polyline per tracked metric (metrics with < 2 usable points are skipped)."""
    series = []
    for name, t in sorted(report.trends.items()):
        pts = [(x, y) for x, y in zip(t["parameter"], t["values"])
               if x is not None and y is not None and x > 0.0 and y > 0.0]
        if len(pts) >= 2:
            series.append((name, np.log10(np.asarray(pts, dtype=float))))
    margin = 60
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<title>{report.scenario}</title>',
             f'<rect x="{margin}" y="{margin // 2}" width="{width - 2 * margin}" '
             f'height="{height - 2 * margin}" fill="none" stroke="black"/>']
    if series:
        allpts = np.concatenate([p for _, p in series])
        lo, hi = allpts.min(axis=0), allpts.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        for k, (name, pts) in enumerate(series):
            u = (pts - lo) / span
            xs = margin + u[:, 0] * (width - 2 * margin)
            ys = height - margin - u[:, 1] * (height - 2 * margin)
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))
            colour = _PALETTE[k % len(_PALETTE)]
            lines.append(f'<polyline data-metric="{_escape(name)}" fill="none" stroke="{colour}" '
                         f'stroke-width="1.5" points="{coords}"/>')
            lines.append(f'<text x="{margin + 8}" y="{margin // 2 + 16 * (k + 1)}" '
                         f'font-size="11" fill="{colour}">{_escape(name)}</text>')
        lines.append(f'<text x="{margin}" y="{height - margin // 3}" font-size="11">'
                     f'log10 parameter [{lo[0]:.3g}, {hi[0]:.3g}], '
                     f'log10 value [{lo[1]:.3g}, {hi[1]:.3g}]</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def emit_report(report: RunReport, formats=("json", "csv"), outputs: dict | None = None,
                include_timing: bool = False) -> dict:
    """Write the report in the requested formats and return ``{format: path}``.

    Paths come from ``outputs`` or else the config's ``outputs``.  The JSON is
    validated against the run-report schema before it is written.  Wall time
    is left out unless ``include_timing`` is set, so that identical configs
    give byte-identical files.
    """
    outputs = dict(report.config.outputs, **(outputs or {}))
    written = {}
    for fmt in formats:
        if fmt not in ("json", "csv", "svg"):
            raise ValueError(f"unknown report format {fmt!r}")
        if fmt not in outputs:
            raise ValueError(f"no output path configured for {fmt}")
        path = Path(outputs[fmt])
        if fmt == "json":
            document = report.to_json(include_timing)
            validate_report(document)
            text = dumps(document)
        elif fmt == "csv":
            text = render_csv(report)
        else:
            text = render_svg(report)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written[fmt] = str(path)
    return written
