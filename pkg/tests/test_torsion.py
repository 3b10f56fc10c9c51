"""Anisotropic torsion potential: explicit solutions, weak form and identities."""
import numpy as np
import pytest

from anisolab import grid as gridlib
from anisolab.domain import build_domain
from anisolab.integrand import DegenerateIntegrandError, SmoothedCrystal
from anisolab.torsion import (ConvergenceError, SolverConfig, bernstein_divergence_check,
                              boundary_identity_check, comparison_check, lipschitz_check,
                              reilly_gap, solve_torsion, torsion_from_field, weak_residual)
from anisolab.wulff import build_wulff

from conftest import SQUARE_NORMALS


def explicit(F, X, r=1.0):
    """(F_*^2 - r^2) / (2(n+1)) inside r K_F, zero outside."""
    n1 = X.shape[-1]
    return np.minimum(F.gauge(X) ** 2 - r * r, 0.0) / (2 * n1)


@pytest.fixture(scope="module")
def disk128(iso):
    K = build_wulff(iso, 1 / 128)
    return K, solve_torsion(K.domain, iso)


@pytest.fixture(scope="module")
def ellipse128(ellipse):
    K = build_wulff(ellipse, 1 / 128)
    return K, solve_torsion(K.domain, ellipse)


def node_at(grid, point):
    return tuple(np.rint(grid.to_index(point)).astype(int))


# ---------------------------------------------------------------------------
# solve_torsion
# ---------------------------------------------------------------------------

def test_disk_centre_value(disk128):
    K, T = disk128
    assert T.u[node_at(K.grid, [0.0, 0.0])] == pytest.approx(-0.25, abs=2e-3)


def test_ellipse_wulff_explicit_solution(ellipse128, ellipse):
    K, T = ellipse128
    err = np.abs(T.u - explicit(ellipse, K.grid.coords()))
    assert err.max() <= 5e-3


@pytest.mark.parametrize("r", [0.5, 1.5])
def test_scaled_wulff_minimum(r, ellipse):
    D = build_domain({"type": "wulff", "scale": r}, 1 / 64, integrand=ellipse)
    T = solve_torsion(D, ellipse)
    assert T.u.min() == pytest.approx(-r * r / 4, abs=5e-3 * r * r)


def test_sign_and_support(ellipse_wulff64):
    K, T = ellipse_wulff64
    D = K.domain
    assert T.u.max() <= 0.0
    assert np.all(T.u[~D.inside] == 0.0)
    assert np.all(T.u[D.phi < -2 * D.spacing] < 0.0)


def test_flux_divergence_is_one_away_from_critical_set(ellipse_wulff64):
    K, T = ellipse_wulff64
    D = K.domain
    div = gridlib.divergence(T.cahnHoffmanField, D.spacing)
    deep = (D.phi < -4 * D.spacing) & ~T.criticalSetMask
    np.testing.assert_allclose(div[deep], 1.0, atol=1e-2)


def test_energy_trace_never_increases(ellipse_wulff64):
    _, T = ellipse_wulff64
    trace = np.asarray(T.energyTrace)
    assert np.all(np.diff(trace) <= 1e-14 * np.abs(trace[:-1]))
    assert trace[-1] < trace[0] or len(trace) == 1


def test_energy_matches_explicit_value(ellipse_wulff64):
    """For u = (F_*^2 - 1)/4 on K_F: int F(grad u)^2/2 + u = -|K| / 16."""
    K, T = ellipse_wulff64
    assert T.energy == pytest.approx(-K.volume / 16, rel=5e-3)


def test_nonconvergence_carries_trace(iso):
    D = build_domain({"type": "ellipse", "semi_axes": [1.2, 1.0]}, 1 / 32)
    F = SmoothedCrystal(SQUARE_NORMALS, eps=0.2)
    with pytest.raises(ConvergenceError) as info:
        solve_torsion(D, F, SolverConfig(tol=1e-14, max_iters=3))
    assert len(info.value.trace) >= 1


def test_crystalline_limit_rejected():
    D = build_domain({"type": "ball"}, 1 / 16)
    with pytest.raises(DegenerateIntegrandError):
        solve_torsion(D, SmoothedCrystal(SQUARE_NORMALS, eps=0.0))


def test_sup_norm_convergence_rate(ellipse):
    spacings = [1 / 32, 1 / 64, 1 / 128]
    errors = []
    for h in spacings:
        K = build_wulff(ellipse, h)
        T = solve_torsion(K.domain, ellipse)
        errors.append(np.abs(T.u - explicit(ellipse, K.grid.coords())).max())
    slope = np.polyfit(np.log(spacings), np.log(errors), 1)[0]
    assert slope >= 1.0


def test_critical_set_is_small(ellipse_wulff64, disk64):
    for _, T in (ellipse_wulff64, disk64):
        assert T.criticalSetMask[T.inside].mean() <= 0.05


def test_comparison_principle(iso):
    h = 1 / 64
    box = ([-1.2, -1.2], [1.2, 1.2])
    inner = solve_torsion(build_domain({"type": "ellipse", "semi_axes": [0.9, 0.6]}, h, box=box), iso)
    outer = solve_torsion(build_domain({"type": "ball"}, h, box=box), iso)
    assert comparison_check(inner, outer) <= 2 * h * outer.supGrad


def test_stored_field_roundtrip(disk64, iso):
    K, T = disk64
    again = torsion_from_field(K.domain, iso, T.u)
    assert again.energy == pytest.approx(T.energy, rel=1e-12)
    assert again.residualNorm <= 10 * SolverConfig().tol
    with pytest.raises(ValueError):
        torsion_from_field(K.domain, iso, T.u[:-1])


# ---------------------------------------------------------------------------
# weak residual
# ---------------------------------------------------------------------------

def injected(F, K):
    return torsion_from_field(K.domain, F, explicit(F, K.grid.coords()))


def test_injected_exact_residual_is_first_order(iso):
    res = []
    for h in (1 / 32, 1 / 64):
        K = build_wulff(iso, h)
        res.append(weak_residual(injected(iso, K), 20))
    assert res[1] <= 0.75 * res[0]
    assert res[1] <= 5 * (1 / 64)


def test_solved_residual_within_twice_injected(disk64, iso):
    K, T = disk64
    assert weak_residual(T, 20) <= 2 * weak_residual(injected(iso, K), 20)


def test_bump_outside_contributes_nothing(disk64):
    _, T = disk64
    assert weak_residual(T, centres=[[1.0, 1.0]], radii=[0.3]) == 0.0


# ---------------------------------------------------------------------------
# Lipschitz bound
# ---------------------------------------------------------------------------

def test_disk_lipschitz(disk128, iso):
    K, T = disk128
    check = lipschitz_check(T, K.domain, iso)
    assert check.supGrad == pytest.approx(0.5, rel=2e-2)
    assert check.bound == pytest.approx(1.0, rel=2e-2)
    assert check.satisfied


def test_ellipse_lipschitz(ellipse_wulff64, ellipse):
    K, T = ellipse_wulff64
    check = lipschitz_check(T, K.domain, ellipse)
    assert check.bound == pytest.approx(1.0, rel=2e-2)
    # analytic gradient of the explicit solution: (x1 / 4, x2) / (n+1)
    X = K.grid.coords()[K.domain.inside]
    oracle = np.max(np.hypot(X[:, 0] / 4, X[:, 1])) / 2
    assert check.supGrad == pytest.approx(oracle, rel=2e-2)
    assert check.satisfied


def test_lipschitz_flag_invariant_under_scaling(ellipse):
    flags = []
    for r in (0.5, 1.0):
        D = build_domain({"type": "wulff", "scale": r}, 1 / 64, integrand=ellipse)
        check = lipschitz_check(solve_torsion(D, ellipse), D, ellipse)
        flags.append(check.satisfied)
        assert check.supGrad == pytest.approx(0.5 * r, rel=3e-2)
    assert flags == [True, True]


def test_lipschitz_not_applicable_for_nonconvex(iso):
    D = build_domain({"type": "dumbbell", "neck_width": 0.3}, 1 / 32)
    check = lipschitz_check(solve_torsion(D, iso), D, iso)
    assert check.satisfied is None and "not applicable" in check.status


# ---------------------------------------------------------------------------
# Reilly identity
# ---------------------------------------------------------------------------

def test_disk_reilly_sides(disk128, iso):
    K, T = disk128
    lhs, rhs, gap = reilly_gap(T, K.domain, iso)
    assert lhs == pytest.approx(np.pi / 2, rel=3e-2)
    assert rhs == pytest.approx(np.pi / 2, rel=3e-2)
    assert gap == pytest.approx(lhs - rhs)


def test_ellipse_reilly(ellipse128, ellipse):
    """Both sides equal |K_F| / 2 = pi for the explicit solution."""
    K, T = ellipse128
    lhs, rhs, gap = reilly_gap(T, K.domain, ellipse)
    assert abs(gap) / abs(rhs) <= 5e-2
    assert rhs == pytest.approx(np.pi, rel=3e-2)


def test_reilly_gap_refines(ellipse):
    gaps = []
    for h in (1 / 32, 1 / 64):
        K = build_wulff(ellipse, h)
        gaps.append(abs(reilly_gap(solve_torsion(K.domain, ellipse), K.domain, ellipse)[2]))
    assert gaps[0] >= 1.5 * gaps[1]


# ---------------------------------------------------------------------------
# boundary identity
# ---------------------------------------------------------------------------

def test_boundary_identity_disk(disk64, iso):
    K, T = disk64
    assert boundary_identity_check(T, K.domain, iso) <= 5e-2


def test_boundary_identity_wulff(ellipse_wulff64, ellipse):
    K, T = ellipse_wulff64
    assert boundary_identity_check(T, K.domain, ellipse) <= 5e-2


def test_boundary_identity_scaled(ellipse):
    """Every term of the identity is dimensionless, so the bound carries over to r K_F."""
    D = build_domain({"type": "wulff", "scale": 0.5}, 1 / 128, integrand=ellipse)
    assert boundary_identity_check(solve_torsion(D, ellipse), D, ellipse) <= 5e-2


# ---------------------------------------------------------------------------
# Bernstein divergence identity
# ---------------------------------------------------------------------------

def test_bernstein_linear_field(disk64):
    K, _ = disk64
    V = K.grid.coords() / 2
    assert bernstein_divergence_check(V, K.domain) <= 1e-2


def test_bernstein_torsion_flux(ellipse_wulff64):
    K, T = ellipse_wulff64
    assert bernstein_divergence_check(T.cahnHoffmanField, K.domain, div_tol=1e-2) <= 5e-2


def test_bernstein_constant_field(disk64):
    K, _ = disk64
    V = np.broadcast_to(np.array([0.3, -0.7]), K.grid.shape + (2,)).copy()
    assert bernstein_divergence_check(V, K.domain) == pytest.approx(0.0, abs=1e-12)


def test_bernstein_rejects_nonconstant_divergence(disk64):
    K, _ = disk64
    X = K.grid.coords()
    with pytest.raises(ValueError, match="not constant"):
        bernstein_divergence_check(X ** 2, K.domain)
    with pytest.raises(ValueError):
        bernstein_divergence_check(X[..., :1], K.domain)
