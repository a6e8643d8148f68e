"""Grids, quadrature and normalized associated Legendre functions."""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphgreen.errors import ConfigurationError, DomainError
from sphgreen.harmonics import (
    GridKind,
    SphericalGrid,
    assoc_legendre,
    build_grid,
    gauss_legendre_nodes,
    legendre_on_grid,
    legendre_values,
    sph_harm,
)


def test_gauss_two_point_rule():
    x, w = gauss_legendre_nodes(2)
    np.testing.assert_allclose(np.sort(x), [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(w, [1.0, 1.0], atol=1e-15)


def test_gauss_n16_monomial_x10():
    x, w = gauss_legendre_nodes(16)
    assert abs(np.sum(w * x**10) - 2 / 11) <= 1e-13 * (2 / 11)


@pytest.mark.parametrize("n", [1, 2, 5, 16, 33])
def test_gauss_rule_exact_up_to_degree_2n_minus_1(n):
    x, w = gauss_legendre_nodes(n)
    for k in range(2 * n):
        exact = 2.0 / (k + 1) if k % 2 == 0 else 0.0
        assert abs(np.sum(w * x**k) - exact) <= 1e-13 * 2


@pytest.mark.parametrize("kind", ["gauss", "equiangular"])
def test_quadrature_weights_sum_to_two(kind):
    g = build_grid(12, 24, kind)
    assert abs(g.quad_weights.sum() - 2.0) < 1e-14
    assert abs(g.area_weights.sum() - 4 * np.pi) < 1e-13


def test_grid_geometry():
    g = build_grid(16, 33)
    assert g.lmax == 15
    assert g.shape == (16, 33)
    assert np.all(np.diff(g.colatitudes) > 0)
    assert abs(g.dlon - 2 * np.pi / 33) < 1e-16
    np.testing.assert_allclose(g.latitudes, np.pi / 2 - g.colatitudes)
    assert repr(g) == "SphericalGrid(16x33, gauss)"


def test_grid_half_rounds_nlon_up():
    g = build_grid(16, 33)
    assert g.half().shape == (8, 17)
    assert g.half().half().shape == (4, 9)


def test_grid_rejects_undersampled_longitude():
    with pytest.raises(ConfigurationError):
        build_grid(16, 30)


def test_grid_kind_codes_round_trip():
    for kind in GridKind:
        assert GridKind.from_code(kind.code) is kind
        assert GridKind.parse(kind.value) is kind
    with pytest.raises(ConfigurationError):
        GridKind.parse("hexagonal")


def test_legendre_matches_mpmath_to_lmax_50():
    x = 0.3
    v = legendre_values(50, np.array(x))
    theta = mpmath.acos(x)
    worst = 0.0
    with mpmath.workdps(40):
        for l in range(51):
            for m in range(l + 1):
                ref = float(mpmath.re(mpmath.spherharm(l, m, theta, 0)))
                worst = max(worst, abs(v[l, m] - ref))
    assert worst <= 1e-12


def test_legendre_low_degree_closed_forms():
    x = np.linspace(-1, 1, 9)
    s = np.sqrt(1 - x**2)
    t = assoc_legendre(2, x)
    np.testing.assert_allclose(t[0, 0], np.full_like(x, 1 / np.sqrt(4 * np.pi)), atol=1e-15)
    np.testing.assert_allclose(t[1, 0], np.sqrt(3 / (4 * np.pi)) * x, atol=1e-15)
    np.testing.assert_allclose(t[1, 1], -np.sqrt(3 / (8 * np.pi)) * s, atol=1e-15)
    np.testing.assert_allclose(t[2, 0], np.sqrt(5 / (16 * np.pi)) * (3 * x**2 - 1), atol=1e-15)


def test_legendre_finite_at_high_degree():
    v = legendre_values(200, np.array([-1.0, -0.999, 0.0, 0.999, 1.0]))
    assert np.all(np.isfinite(v))


def test_legendre_upper_triangle_is_zero():
    v = legendre_values(6, np.array([0.2, -0.7]))
    l, m = np.meshgrid(np.arange(7), np.arange(7), indexing="ij")
    assert np.all(v[m > l] == 0.0)


def test_legendre_domain_errors():
    with pytest.raises(DomainError):
        legendre_values(3, np.array([1.5]))
    with pytest.raises(DomainError):
        legendre_values(-1, np.array([0.0]))


@settings(max_examples=30, deadline=None)
@given(
    l=st.integers(0, 12),
    data=st.data(),
    theta=st.floats(0.0, np.pi),
    phi=st.floats(0.0, 2 * np.pi),
)
def test_conjugate_symmetry_exact(l, data, theta, phi):
    m = data.draw(st.integers(0, l))
    assert sph_harm(l, -m, theta, phi) == (-1) ** m * np.conj(sph_harm(l, m, theta, phi))


def test_sph_harm_matches_mpmath():
    rng = np.random.default_rng(0)
    for _ in range(20):
        l = int(rng.integers(0, 10))
        m = int(rng.integers(-l, l + 1))
        th, ph = rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)
        ref = complex(mpmath.spherharm(l, m, th, ph))
        assert abs(sph_harm(l, m, th, ph) - ref) < 1e-13


@pytest.mark.parametrize("kind,nlat,nlon", [("gauss", 16, 33), ("equiangular", 24, 48)])
def test_orthonormality_under_quadrature(kind, nlat, nlon):
    g = build_grid(nlat, nlon, kind)
    lmax = 7 if kind == "equiangular" else g.lmax
    th, ph = np.meshgrid(g.colatitudes, g.longitudes, indexing="ij")
    modes = [(l, m) for l in range(lmax + 1) for m in range(-l, l + 1)]
    Y = np.stack([sph_harm(l, m, th, ph).ravel() for l, m in modes])
    gram = (Y * g.area_weights.ravel()) @ Y.conj().T
    # Fejer nodes are exact to polynomial degree nlat-1 >= 2*lmax
    assert np.abs(gram - np.eye(len(modes))).max() < 1e-13


def test_legendre_on_grid_layout_and_readonly():
    g = build_grid(8, 17)
    t = legendre_on_grid(g, 5)
    assert t.shape == (6, 6, 8)
    ref = legendre_values(5, np.cos(g.colatitudes))
    np.testing.assert_array_equal(t[2, 4], ref[4, 2])
    with pytest.raises(ValueError):
        t[0, 0, 0] = 1.0


def test_grid_is_hashable_value_object():
    assert SphericalGrid(8, 17, GridKind.GAUSS_LEGENDRE) == build_grid(8, 17)
    assert len({build_grid(8, 17), build_grid(8, 17)}) == 1
