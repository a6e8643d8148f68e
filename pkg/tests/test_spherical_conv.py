"""Spectral convolution rule against brute-force rotation-group quadrature."""

import numpy as np
import pytest

from sphgreen.errors import ConfigurationError, ShapeError
from sphgreen.harmonics import build_grid
from sphgreen.spherical_conv import (
    SpectralSymbol,
    ZonalKernel,
    conv_prefactor,
    greens_apply,
    heat_symbol,
    inverse_laplacian_symbol,
    laplace_beltrami_symbol,
    so3_conv_oracle,
    zonal_conv_spectral,
    zonal_part,
)
from sphgreen.tasks import random_bandlimited
from sphgreen.transform import Field, SpectralCoeffs, isht_array, rotate_z, sht, sht_array, triangle_mask

GRID = build_grid(12, 24)


def test_prefactor_l0_is_four_pi_three_halves():
    assert abs(conv_prefactor(0)[0] - 4 * np.pi**1.5) < 1e-13


def test_oracle_of_constants_is_group_volume():
    one = Field(GRID, np.ones(GRID.shape))
    out = so3_conv_oracle(one, one, (24, 12, 24))
    np.testing.assert_allclose(out.values, 8 * np.pi**2, rtol=1e-13)
    spectral = zonal_conv_spectral(sht(one, 4), zonal_part(sht(one, 4)))
    np.testing.assert_allclose(isht_array(spectral.data, GRID), 8 * np.pi**2, rtol=1e-13)


@pytest.mark.parametrize("seed", [0, 1])
def test_spectral_rule_matches_oracle(seed):
    f = random_bandlimited(4, 2, seed=10 + seed, grid=GRID)
    h = random_bandlimited(4, 1, seed=20 + seed, grid=GRID)
    got = sht_array(so3_conv_oracle(f, h, (24, 12, 24)).values, GRID, 4)
    want = zonal_conv_spectral(sht(f, 4), zonal_part(sht(h, 4))).data
    assert np.abs(got - want).max() <= 1e-6 * np.abs(want).max()


def test_only_zonal_kernel_column_matters():
    f = random_bandlimited(4, 1, seed=30, grid=GRID)
    hc = sht_array(random_bandlimited(4, 1, seed=31, grid=GRID).values, GRID, 4)
    zonal = hc.copy()
    zonal[..., 1:] = 0.0
    a = so3_conv_oracle(f, Field(GRID, isht_array(hc, GRID)), lmax=4).values
    b = so3_conv_oracle(f, Field(GRID, isht_array(zonal, GRID)), lmax=4).values
    assert np.abs(a - b).max() <= 1e-6 * np.abs(b).max()


def test_oracle_refuses_large_bandwidth():
    g = build_grid(10, 20)
    f = random_bandlimited(8, 1, seed=1, grid=g)
    with pytest.raises(ConfigurationError):
        so3_conv_oracle(f, f)


def test_oracle_rejects_mismatched_grids():
    f = random_bandlimited(3, 1, seed=1, grid=GRID)
    h = random_bandlimited(3, 1, seed=1, grid=build_grid(8, 16))
    with pytest.raises(ShapeError):
        so3_conv_oracle(f, h)


def phase(c, k, grid):
    return c * np.exp(-1j * np.arange(c.shape[-1]) * grid.dlon * k)


def test_zonal_convolution_commutes_with_z_rotation():
    g = build_grid(10, 21)
    f = random_bandlimited(9, 1, seed=2, grid=g)
    h = zonal_part(sht(random_bandlimited(9, 1, seed=3, grid=g)))
    for k in (1, 5, 20):
        a = zonal_conv_spectral(sht(rotate_z(f, k)), h).data
        b = phase(zonal_conv_spectral(sht(f), h).data, k, g)
        assert np.abs(a - b).max() < 1e-12


def test_greens_apply_linear_and_equivariant():
    g = build_grid(10, 21)
    s = inverse_laplacian_symbol(9)
    a = sht(random_bandlimited(9, 1, seed=4, grid=g))
    b = sht(random_bandlimited(9, 1, seed=5, grid=g))
    lhs = greens_apply(s, SpectralCoeffs(3 * a.data + b.data)).data
    rhs = 3 * greens_apply(s, a).data + greens_apply(s, b).data
    assert np.abs(lhs - rhs).max() < 1e-14
    f = Field(g, isht_array(a.data, g))
    for k in (2, 11):
        assert np.abs(greens_apply(s, sht(rotate_z(f, k))).data - phase(greens_apply(s, a).data, k, g)).max() < 1e-12


def test_symbol_equals_convolution_with_matching_zonal_kernel():
    g = build_grid(10, 21)
    s = heat_symbol(9, 0.05)
    kernel = ZonalKernel(s.values / conv_prefactor(9))
    fc = sht(random_bandlimited(9, 2, seed=6, grid=g))
    np.testing.assert_allclose(zonal_conv_spectral(fc, kernel).data, greens_apply(s, fc).data, atol=1e-14)


def test_inverse_laplacian_symbol_values():
    s = inverse_laplacian_symbol(5).values
    assert s[0] == 0.0
    np.testing.assert_allclose(s[1:], [-1 / 2, -1 / 6, -1 / 12, -1 / 20, -1 / 30], rtol=1e-15)


def test_laplacian_times_inverse_is_identity_off_mean():
    prod = (laplace_beltrami_symbol(8) @ inverse_laplacian_symbol(8)).values
    np.testing.assert_allclose(prod, np.r_[0.0, np.ones(8)], atol=1e-15)


def test_heat_symbols_compose():
    a, b = heat_symbol(6, 0.1), heat_symbol(6, 0.25)
    np.testing.assert_allclose((a @ b).values, heat_symbol(6, 0.35).values, rtol=1e-14)


def test_per_mode_symbol_broadcasts():
    per_degree = inverse_laplacian_symbol(4)
    per_mode = SpectralSymbol(np.broadcast_to(per_degree.values[:, None], (5, 5)).copy())
    assert per_mode.per_mode and not per_degree.per_mode
    fc = SpectralCoeffs(np.random.default_rng(7).standard_normal((1, 5, 5)) * triangle_mask(4))
    np.testing.assert_array_equal(greens_apply(per_mode, fc).data, greens_apply(per_degree, fc).data)
    assert (per_degree @ per_mode).per_mode


def test_symbol_validation():
    with pytest.raises(ShapeError):
        SpectralSymbol(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        SpectralSymbol(np.array([1.0, np.inf]))
    with pytest.raises(ShapeError):
        greens_apply(inverse_laplacian_symbol(2), SpectralCoeffs(np.zeros((1, 5, 5), complex)))
