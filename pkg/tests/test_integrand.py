"""Integrand evaluation, duality and ellipticity."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisolab.integrand import (DegenerateIntegrandError, Dual, SmoothedCrystal, build_family,
                                cahn_hoffman, duality_roundtrip_residual, ellipticity_estimate,
                                evaluate, fibonacci_sphere, gauge, gauge_gradient, make_integrand,
                                nested_sphere_sample)

from conftest import SPECS, SQUARE_NORMALS, integrand

SMOOTH_KINDS = list(SPECS)
SQUARE = {"kind": "crystal", "params": {"normals": SQUARE_NORMALS}}


def ellipse_value(nu):
    """Closed form for axes (2, 1)."""
    nu = np.asarray(nu, dtype=float)
    return np.sqrt(4.0 * nu[..., 0] ** 2 + nu[..., 1] ** 2)


def dense_gauge(F, x, count=200_000):
    """Brute-force sup of x . nu / F(nu) over a fine circle sample."""
    theta = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    nu = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return float(np.max(nu @ np.asarray(x, dtype=float) / F.value(nu)))


def central_difference(fn, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)


vectors = st.tuples(st.floats(-10, 10), st.floats(-10, 10)).filter(
    lambda v: np.hypot(*v) > 1e-3)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_isotropic_value_and_gradient(iso):
    value, grad, _ = evaluate(iso, np.array([3.0, 4.0]))
    assert value == pytest.approx(5.0)
    np.testing.assert_allclose(grad, [0.6, 0.8], atol=1e-14)


def test_ellipse_value_and_gradient(ellipse):
    value, grad, _ = evaluate(ellipse, np.array([1.0, 0.0]))
    assert value == pytest.approx(2.0)
    np.testing.assert_allclose(grad, [2.0, 0.0], atol=1e-14)


def test_ellipse_matches_hand_derivatives(ellipse):
    rng = np.random.default_rng(1)
    nu = rng.normal(size=(50, 2))
    np.testing.assert_allclose(ellipse.value(nu), ellipse_value(nu), rtol=1e-14)
    hand = np.stack([4.0 * nu[:, 0], nu[:, 1]], axis=-1) / ellipse_value(nu)[:, None]
    np.testing.assert_allclose(ellipse.grad(nu), hand, rtol=1e-13)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_doubling_doubles_value_keeps_gradient(kind):
    F = integrand(kind)
    v = np.array([0.3, -1.7])
    assert F.value(2 * v) == pytest.approx(2 * F.value(v), rel=1e-13)
    np.testing.assert_allclose(F.grad(2 * v), F.grad(v), atol=1e-12)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_derivatives_reject_zero_vector(kind):
    F = integrand(kind)
    with pytest.raises(ValueError):
        F.grad(np.zeros(2))
    with pytest.raises(ValueError):
        F.hess(np.zeros(2))
    assert F.value(np.zeros(2)) == 0.0


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_gradient_and_hessian_match_finite_differences(kind):
    F = integrand(kind)
    for nu in fibonacci_sphere(12, 2):
        np.testing.assert_allclose(F.grad(nu), central_difference(F.value, nu), atol=1e-6)
        np.testing.assert_allclose(F.hess(nu), central_difference(F.grad, nu), atol=1e-5)


def test_tangential_hessian_positive_semidefinite():
    for kind in ("isotropic", "ellipse", "crystal", "tabulated"):
        F = integrand(kind)
        nu = fibonacci_sphere(64, 2)
        assert np.linalg.eigvalsh(F.hess(nu)).min() > -1e-10


def test_nonconvex_table_rejected():
    theta = np.linspace(0.0, 2.0 * np.pi, 32, endpoint=False)
    with pytest.raises(ValueError):
        make_integrand({"kind": "tabulated", "params": {"support": (1.0 + 0.5 * np.cos(4 * theta)).tolist()}})


@pytest.mark.parametrize("spec", [
    {"kind": "ellipse", "params": {"axes": [1.0, -1.0]}},
    {"kind": "pnorm", "params": {"p": 1.0}},
    {"kind": "nope"},
    {"kind": "isotropic", "dim": 4},
])
def test_invalid_specs_rejected(spec):
    with pytest.raises(ValueError):
        make_integrand(spec)


# ---------------------------------------------------------------------------
# gauge
# ---------------------------------------------------------------------------

def test_isotropic_gauge(iso):
    assert gauge(iso, np.array([3.0, 4.0])) == pytest.approx(5.0)


def test_ellipse_gauge_closed_form_and_dense_sup(ellipse):
    assert gauge(ellipse, np.array([2.0, 0.0])) == pytest.approx(1.0)
    for x in ([2.0, 0.0], [0.3, -1.2], [-1.5, 0.7]):
        closed = np.sqrt(x[0] ** 2 / 4 + x[1] ** 2)
        assert gauge(ellipse, np.array(x)) == pytest.approx(closed, rel=1e-12)
        assert dense_gauge(ellipse, x) == pytest.approx(closed, rel=1e-8)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_gauge_of_zero_is_zero(kind):
    assert gauge(integrand(kind), np.zeros(2)) == 0.0


@pytest.mark.parametrize("kind", ["pnorm", "crystal", "tabulated"])
def test_numeric_gauge_matches_dense_sup(kind):
    F = integrand(kind)
    for x in ([1.0, 0.0], [0.4, 0.9], [-1.1, 0.3]):
        assert gauge(F, np.array(x)) == pytest.approx(dense_gauge(F, x), rel=1e-8)


def test_gauge_gradient_examples(iso, ellipse):
    np.testing.assert_allclose(gauge_gradient(iso, np.array([0.0, 2.0])), [0.0, 1.0], atol=1e-14)
    g = gauge_gradient(ellipse, np.array([2.0, 0.0]))
    np.testing.assert_allclose(g, [0.5, 0.0], atol=1e-14)
    assert ellipse.value(g) == pytest.approx(1.0)


def test_crystal_gauge_gradient_on_facet_normal_matches_finite_differences():
    F = SmoothedCrystal(SQUARE_NORMALS, eps=0.1)
    x = np.array([1.0, 0.0])
    numeric = central_difference(F.gauge, x)
    np.testing.assert_allclose(gauge_gradient(F, x), numeric, atol=1e-6)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_gauge_gradient_lies_on_unit_level(kind):
    F = integrand(kind)
    x = np.random.default_rng(2).normal(size=(40, 2))
    g = gauge_gradient(F, x)
    np.testing.assert_allclose(F.value(g), 1.0, atol=1e-9)
    np.testing.assert_allclose(F.gauge(x)[:, None] * F.grad(g), x, atol=1e-8)


def test_crystalline_limit_refuses_derivatives():
    F = SmoothedCrystal(SQUARE_NORMALS, eps=0.0)
    assert not F.smooth
    with pytest.raises(DegenerateIntegrandError):
        gauge_gradient(F, np.array([1.0, 0.0]))
    with pytest.raises(DegenerateIntegrandError):
        duality_roundtrip_residual(F, np.array([1.0, 0.0]))


# ---------------------------------------------------------------------------
# Cahn-Hoffman map and the inverse-map identities
# ---------------------------------------------------------------------------

def test_cahn_hoffman_examples(iso, ellipse):
    np.testing.assert_allclose(cahn_hoffman(iso, np.array([3.0, 4.0])), [3.0, 4.0], atol=1e-14)
    np.testing.assert_allclose(cahn_hoffman(ellipse, np.array([1.0, 1.0])), [4.0, 1.0], atol=1e-14)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_cahn_hoffman_of_zero_is_exactly_zero(kind):
    out = cahn_hoffman(integrand(kind), np.zeros(2))
    assert np.array_equal(out, np.zeros(2))


def test_roundtrip_examples(iso, ellipse):
    rt, hs = duality_roundtrip_residual(iso, np.array([1.0, 0.0]))
    assert rt == pytest.approx(0.0, abs=1e-14) and hs == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(ellipse.dual_half_square_grad(np.array([4.0, 1.0])), [1.0, 1.0])
    rt, _ = duality_roundtrip_residual(ellipse, np.array([1.0, 1.0]))
    assert rt < 1e-14


def test_crystal_roundtrip_on_random_vectors():
    F = SmoothedCrystal(SQUARE_NORMALS, eps=0.1)
    z = np.random.default_rng(3).normal(size=(100, 2))
    rt, hs = duality_roundtrip_residual(F, z)
    assert rt.max() <= 1e-6
    assert hs.max() <= 1e-5


# ---------------------------------------------------------------------------
# ellipticity
# ---------------------------------------------------------------------------

def test_isotropic_profile(iso):
    p = ellipticity_estimate(iso, 128)
    for v in (p.mF, p.MF, p.lam, p.Lam):
        assert v == pytest.approx(1.0, abs=1e-12)


def test_ellipse_profile(ellipse):
    p = ellipticity_estimate(ellipse, 128)
    assert p.mF == pytest.approx(1.0, abs=1e-12)
    assert p.MF == pytest.approx(2.0, abs=1e-12)


def test_sample_count_minimum():
    with pytest.raises(ValueError):
        ellipticity_estimate(integrand("isotropic"), 32)
    with pytest.raises(ValueError):
        ellipticity_estimate(make_integrand({"kind": "isotropic", "dim": 3}), 512)


def test_nested_samples_make_estimates_monotone():
    F = integrand("tabulated")
    coarse, fine = ellipticity_estimate(F, 64), ellipticity_estimate(F, 512)
    small = nested_sphere_sample(64, 2)
    assert np.allclose(small, nested_sphere_sample(512, 2)[:64])
    assert fine.mF <= coarse.mF and fine.MF >= coarse.MF
    assert fine.lam <= coarse.lam and fine.Lam >= coarse.Lam


def test_crystal_ellipticity_degenerates_with_smoothing():
    eps = (0.4, 0.2, 0.1, 0.05)
    profiles = [SmoothedCrystal(SQUARE_NORMALS, eps=e).profile for e in eps]
    lam = [p.lam for p in profiles]
    assert all(b < a for a, b in zip(lam, lam[1:]))
    assert lam[-1] < 1e-2
    # the largest tangential curvature grows like 1/eps
    scaled = [p.Lam * e for p, e in zip(profiles, eps)]
    assert min(scaled) > 0.5 and max(scaled) < 2.0


def test_crystal_hessian_finite_difference_at_facet_and_corner():
    F = SmoothedCrystal(SQUARE_NORMALS, eps=0.1)
    for nu in (np.array([1.0, 0.0]), np.array([1.0, 1.0]) / np.sqrt(2.0)):
        np.testing.assert_allclose(F.hess(nu), central_difference(F.grad, nu, 1e-6), atol=1e-4)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_profile_bounds_relations(kind):
    F = integrand(kind)
    p = F.profile
    assert 0.0 < p.mF <= p.MF
    assert p.lamStar >= p.mF * min(p.lam, p.mF) - 1e-9
    assert p.LamStar <= 2.0 * p.MF * max(p.MF, p.Lam) + 1e-9
    nu = fibonacci_sphere(1000, 2)
    slack = 1e-3 * p.MF
    assert np.all(F.value(nu) >= p.mF - slack) and np.all(F.value(nu) <= p.MF + slack)
    g = np.linalg.norm(F.grad(nu), axis=-1)
    assert np.all(g >= p.mF - slack) and np.all(g <= p.MF + slack)


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

def test_square_family_at_unit_smoothing_is_round_enough():
    fam = build_family(SQUARE, [1.0])
    p = fam.ellipticity_trace[0]
    assert p.lam > 0.0
    assert p.mF / p.MF >= 0.7


def test_square_family_converges_pointwise():
    fam = build_family(SQUARE, [0.5, 0.25, 0.125])
    diagonal = np.array([1.0, 1.0]) / np.sqrt(2.0)
    limit = fam.limit(diagonal)
    assert limit == pytest.approx(np.sqrt(2.0))
    errors = [abs(F.value(diagonal) - limit) for F in fam.members]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    facet = np.array([1.0, 0.0])
    for F in fam.members:
        assert F.value(facet) == pytest.approx(fam.limit(facet), abs=1e-12)


def test_family_bounds_are_uniform():
    fam = build_family(SQUARE, [0.5, 0.25, 0.125])
    for p in fam.ellipticity_trace:
        assert fam.m <= p.mF and p.MF <= fam.M


def test_isotropic_family_is_constant():
    fam = build_family({"kind": "isotropic"}, [0.5, 0.1])
    nu = fibonacci_sphere(50, 2)
    for F in fam.members:
        np.testing.assert_allclose(F.value(nu), 1.0)


@pytest.mark.parametrize("eps", [[], [0.1, 0.2], [0.1, -0.05]])
def test_family_rejects_bad_schedules(eps):
    with pytest.raises(ValueError):
        build_family(SQUARE, eps)


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", SMOOTH_KINDS)
@settings(max_examples=40, deadline=None)
@given(v=vectors, t=st.floats(1e-3, 1e3))
def test_homogeneity(kind, v, t):
    F = integrand(kind)
    v = np.array(v)
    assert abs(F.value(t * v) - t * F.value(v)) <= 1e-12 * t * F.value(v)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
@settings(max_examples=40, deadline=None)
@given(x=vectors, nu=vectors)
def test_fenchel_inequality(kind, x, nu):
    F = integrand(kind)
    x, nu = np.array(x), np.array(nu)
    assert x @ nu <= F.gauge(x) * F.value(nu) * (1.0 + 1e-12) + 1e-12


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_fenchel_inequality_bulk(kind):
    F = integrand(kind)
    rng = np.random.default_rng(4)
    x, nu = rng.normal(size=(10_000, 2)), rng.normal(size=(10_000, 2))
    slack = F.gauge(x) * F.value(nu) - np.sum(x * nu, axis=-1)
    assert slack.min() >= -1e-12


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_biduality(kind):
    F = integrand(kind)
    nu = fibonacci_sphere(200, 2)
    bidual = Dual(F).gauge_by_search(nu)
    assert np.max(np.abs(bidual - F.value(nu))) <= 1e-10


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_extremal_duality(kind):
    F = integrand(kind)
    sample = fibonacci_sphere(4096, 2)
    star = F.gauge(sample)
    fine = F.value(fibonacci_sphere(4096, 2))
    assert star.min() == pytest.approx(1.0 / fine.max(), abs=1e-3)
    assert star.max() == pytest.approx(1.0 / fine.min(), abs=1e-3)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_hessian_annihilates_the_normal(kind):
    F = integrand(kind)
    rng = np.random.default_rng(5)
    nu = rng.normal(size=(100, 2))
    nu /= np.linalg.norm(nu, axis=1)[:, None]
    assert np.abs(np.einsum("nij,nj->ni", F.hess(nu), nu)).max() <= 1e-8
    # finite differences of the gradient along the radial direction
    s = 1e-5
    radial = (F.grad(nu * (1 + s)) - F.grad(nu * (1 - s))) / (2 * s)
    assert np.abs(radial).max() <= 1e-8


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
def test_duality_roundtrip_bulk(kind):
    F = integrand(kind)
    rng = np.random.default_rng(6)
    z = rng.normal(size=(1000, 2)) * rng.uniform(0.1, 10.0, size=(1000, 1))
    rt, hs = duality_roundtrip_residual(F, z)
    assert rt.max() <= 1e-6 * max(1.0, np.abs(z).max())
    assert hs.max() <= 1e-5
