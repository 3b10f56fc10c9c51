"""Wulff shapes and their constants against closed forms and parametric quadrature."""
import numpy as np
import pytest
from scipy.integrate import quad
from scipy.spatial import ConvexHull

from anisolab.domain import build_domain, surface_energy, volume
from anisolab.grid import Grid
from anisolab.integrand import SmoothedCrystal, make_integrand
from anisolab.wulff import CACHE_ENV, build_wulff, gauge_moment, moment_constant, wulff_energy

from conftest import SQUARE_NORMALS, integrand


def polar_area(F):
    """|{F_* < 1}| = 1/2 * integral of r(theta)^2 with r = 1 / F_*(e_theta).

    The periodic trapezoid rule converges spectrally for the smooth radius.
    """
    t = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
    r = 1.0 / F.gauge(np.stack([np.cos(t), np.sin(t)], axis=-1))
    return 0.5 * float(np.mean(r ** 2)) * 2.0 * np.pi


@pytest.fixture(scope="module")
def disk128(iso):
    return build_wulff(iso, 1 / 128)


def test_disk_volume(disk128):
    assert disk128.volume == pytest.approx(np.pi, abs=1e-3)


def test_ellipse_volume(ellipse):
    K = build_wulff(ellipse, 1 / 128)
    assert K.volume == pytest.approx(2 * np.pi, abs=1e-3)
    # semi-axes (2, 1): the level set crosses zero at the axis tips
    assert K.integrand.gauge(np.array([2.0, 0.0])) == pytest.approx(1.0)
    assert K.integrand.gauge(np.array([0.0, 1.0])) == pytest.approx(1.0)


def test_smoothed_square_volume():
    F = SmoothedCrystal(SQUARE_NORMALS, eps=0.05)
    K = build_wulff(F, 1 / 128)
    oracle = polar_area(F)
    assert K.volume == pytest.approx(oracle, rel=1e-3)
    assert K.volume == pytest.approx(4.0, rel=2e-2)


def test_levelset_is_gauge_minus_one(ellipse):
    K = build_wulff(ellipse, 1 / 32)
    X = K.grid.coords()
    np.testing.assert_allclose(K.levelset, np.sqrt(X[..., 0] ** 2 / 4 + X[..., 1] ** 2) - 1.0,
                               atol=1e-13)


def test_contains_origin_and_convex():
    F = integrand("tabulated")
    K = build_wulff(F, 1 / 64)
    origin = np.rint(-np.asarray(K.grid.origin) / K.grid.spacing).astype(int)
    assert K.levelset[tuple(origin)] < 0.0
    hull = ConvexHull(K.domain.boundary.points)
    assert hull.volume == pytest.approx(K.volume, rel=2e-3)


def test_disk_moment_constant(disk128):
    assert moment_constant(disk128) == pytest.approx(2 * np.pi, abs=1e-3)


def test_ellipse_moment_constant_parametric(ellipse):
    K = build_wulff(ellipse, 1 / 128)

    def integrand_(t):
        x = np.array([2 * np.cos(t), np.sin(t)])
        speed = np.hypot(2 * np.sin(t), np.cos(t))
        slope = np.hypot(x[0] / 4, x[1])  # |grad F_*| with F_* = 1 on the boundary
        return speed / slope

    oracle = quad(integrand_, 0.0, 2 * np.pi, epsabs=1e-12)[0]
    assert moment_constant(K) == pytest.approx(oracle, abs=1e-3)


@pytest.mark.parametrize("kind", ["ellipse", "crystal"])
def test_moment_constant_scales_like_r_to_the_n(kind):
    F = integrand(kind)
    one = moment_constant(build_wulff(F, 1 / 64))
    r = 0.5
    scaled = moment_constant(build_wulff(F, 1 / 64, scale=r))
    assert scaled == pytest.approx(r * one, rel=5e-3)


def test_disk_gauge_moments(disk128):
    assert gauge_moment(disk128, 0.0) == disk128.volume
    assert gauge_moment(disk128, 0.0) == pytest.approx(np.pi, abs=1e-3)
    assert gauge_moment(disk128, 2.0) == pytest.approx(np.pi / 2, rel=1e-3)


@pytest.mark.parametrize("kind", ["isotropic", "ellipse", "crystal", "tabulated"])
def test_gauge_moment_identity(kind):
    K = build_wulff(integrand(kind), 1 / 128)
    C = moment_constant(K)
    n1 = K.dim
    for alpha in (0.0, 0.5, 1.0, 2.0, 3.0):
        assert gauge_moment(K, alpha) * (n1 + alpha) == pytest.approx(C, rel=1e-2)


def test_negative_alpha_rejected(disk128):
    with pytest.raises(ValueError):
        gauge_moment(disk128, -1.0)


@pytest.mark.parametrize("kind", ["isotropic", "ellipse", "crystal", "tabulated"])
def test_energy_equals_dimension_times_volume(kind):
    K = build_wulff(integrand(kind), 1 / 128)
    assert wulff_energy(K) == pytest.approx(K.dim * K.volume, rel=5e-3)


def test_grid_must_contain_the_shape(ellipse):
    with pytest.raises(ValueError):
        build_wulff(ellipse, Grid((-1.0, -1.0), 1 / 16, (33, 33)))
    with pytest.raises(ValueError):
        build_wulff(ellipse, 1 / 16, scale=0.0)


def test_explicit_grid_and_center(ellipse):
    g = Grid.covering([-4, -3], [4, 3], 1 / 32)
    K = build_wulff(ellipse, g, scale=0.5, center=[0.5, 0.25])
    assert K.volume == pytest.approx(0.25 * 2 * np.pi, rel=2e-3)


def test_sphere_volume_3d():
    F = make_integrand({"kind": "isotropic", "dim": 3})
    K = build_wulff(F, 1 / 16)
    assert K.volume == pytest.approx(4 * np.pi / 3, rel=3e-3)


def test_cache_roundtrip(tmp_path, monkeypatch, ellipse):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path))
    first = build_wulff(ellipse, 1 / 32)
    files = list(tmp_path.glob("wulff-*.npy"))
    assert len(files) == 1
    second = build_wulff(ellipse, 1 / 32)
    assert np.array_equal(first.levelset, second.levelset)


@pytest.mark.parametrize("spec", [
    {"type": "ellipse", "semi_axes": [1.2, 1.0]},
    {"type": "perturbed", "base": {"type": "ball"}, "amplitude": 0.2, "mode": 3},
    {"type": "dumbbell", "neck_width": 0.3},
])
@pytest.mark.parametrize("kind", ["isotropic", "ellipse"])
def test_wulff_inequality_on_non_wulff_domains(spec, kind):
    F = integrand(kind)
    K = build_wulff(F, 1 / 64)
    D = build_domain(spec, 1 / 64, integrand=F)
    n1 = D.dim
    bound = n1 * K.volume ** (1 / n1) * volume(D) ** ((n1 - 1) / n1)
    assert surface_energy(D, F) >= bound * (1 + 1e-3)


@pytest.mark.parametrize("kind", ["isotropic", "ellipse", "tabulated"])
def test_wulff_inequality_equality_on_scaled_translates(kind):
    F = integrand(kind)
    K = build_wulff(F, 1 / 64)
    D = build_domain({"type": "wulff", "scale": 0.7, "center": [0.3, -0.2]}, 1 / 64, integrand=F)
    n1 = D.dim
    bound = n1 * K.volume ** (1 / n1) * volume(D) ** ((n1 - 1) / n1)
    assert surface_energy(D, F) == pytest.approx(bound, rel=1e-2)
