"""Forward/inverse spherical harmonic transforms, spectral resampling and the
spherical integral.

Array conventions: spatial samples are ``[..., nlat, nlon]``; coefficients are
dense ``[..., lmax+1, lmax+1]`` complex arrays indexed ``[l, m]`` with
``m >= 0`` and zeros above the diagonal (``m > l``).  Negative orders are
implied by the conjugate symmetry of real fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .harmonics import SphericalGrid, legendre_on_grid

__all__ = [
    "Field",
    "SpectralCoeffs",
    "sht",
    "isht",
    "sht_array",
    "isht_array",
    "sht_adjoint",
    "isht_adjoint",
    "resample",
    "resample_array",
    "truncate",
    "spherical_integral",
    "integral_array",
    "rotate_z",
    "synthesize_at",
    "triangle_mask",
    "triangle_indices",
]


def triangle_mask(lmax: int) -> np.ndarray:
    l, m = np.indices((lmax + 1, lmax + 1))
    return m <= l


def triangle_indices(lmax: int) -> tuple[np.ndarray, np.ndarray]:
    """``(l, m)`` index arrays of the packed triangle, ordered by ``l`` then ``m``."""
    return np.nonzero(triangle_mask(lmax))


@dataclass(frozen=True)
class Field:
    """Real samples ``values[..., channels, nlat, nlon]`` on ``grid``.

    Leading dimensions beyond ``channels`` are treated as a batch.
    """

    grid: SphericalGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim < 3 or v.shape[-2:] != self.grid.shape:
            raise ShapeError(f"field shape {v.shape} does not match grid {self.grid}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[-3]

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)


@dataclass(frozen=True)
class SpectralCoeffs:
    """Harmonic coefficients ``data[..., channels, l, m]`` for ``0 <= m <= l <= lmax``."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim == 2:
            d = d[None]
        if d.ndim < 3 or d.shape[-1] != d.shape[-2]:
            raise ShapeError(f"coefficient array must end in a square [l, m] block, got {d.shape}")
        if np.any(d[..., ~triangle_mask(d.shape[-1] - 1)] != 0):
            raise ShapeError("coefficients with m > l must be zero")
        object.__setattr__(self, "data", d)

    @property
    def lmax(self) -> int:
        return self.data.shape[-1] - 1

    @property
    def channels(self) -> int:
        return self.data.shape[-3]

    def packed(self) -> np.ndarray:
        """``[..., channels, (lmax+1)(lmax+2)/2]`` view of the triangle."""
        li, mi = triangle_indices(self.lmax)
        return self.data[..., li, mi]

    @classmethod
    def from_packed(cls, packed, lmax: int) -> "SpectralCoeffs":
        packed = np.asarray(packed, dtype=np.complex128)
        li, mi = triangle_indices(lmax)
        if packed.shape[-1] != li.size:
            raise ShapeError(f"expected {li.size} packed coefficients for lmax={lmax}")
        out = np.zeros(packed.shape[:-1] + (lmax + 1, lmax + 1), dtype=np.complex128)
        out[..., li, mi] = packed
        return cls(out)

    def __getitem__(self, lm):
        """``c[l, m]`` for any sign of ``m`` (all channels)."""
        l, m = lm
        if m >= 0:
            return self.data[..., l, m]
        return (-1) ** (-m) * np.conj(self.data[..., l, -m])


def _check_lmax(grid: SphericalGrid, lmax: int):
    if lmax < 0 or lmax > grid.lmax:
        raise ConfigurationError(f"lmax={lmax} exceeds what {grid} can resolve (lmax={grid.lmax})")


def _m_weights(lmax: int) -> np.ndarray:
    w = np.full(lmax + 1, 2.0)
    w[0] = 1.0
    return w


def sht_array(values: np.ndarray, grid: SphericalGrid, lmax: int) -> np.ndarray:
    """Quadrature SHT of ``values[..., nlat, nlon]``; returns ``[..., l, m]``."""
    _check_lmax(grid, lmax)
    pct = legendre_on_grid(grid, lmax)
    fm = np.fft.rfft(values, axis=-1)[..., : lmax + 1] * grid.dlon
    fm = fm * grid.quad_weights[:, None]
    return np.einsum("mli,...im->...lm", pct, fm)


def isht_array(coeffs: np.ndarray, grid: SphericalGrid) -> np.ndarray:
    """Synthesis of ``coeffs[..., l, m]`` on ``grid``; imaginary parts of the
    ``m = 0`` column are discarded (real-field projection)."""
    lmax = coeffs.shape[-1] - 1
    if 2 * lmax + 1 > grid.nlon:
        raise ConfigurationError(f"lmax={lmax} aliases on {grid}")
    pct = legendre_on_grid(grid, lmax)
    gm = np.einsum("mli,...lm->...im", pct, coeffs)
    spec = np.zeros(gm.shape[:-1] + (grid.nlon // 2 + 1,), dtype=np.complex128)
    spec[..., : lmax + 1] = gm
    spec[..., 0] = spec[..., 0].real
    return np.fft.irfft(spec * grid.nlon, n=grid.nlon, axis=-1)


def isht_adjoint(grad_values: np.ndarray, grid: SphericalGrid, lmax: int) -> np.ndarray:
    """Adjoint of :func:`isht_array` under the real inner product on
    ``(Re c, Im c)`` pairs: an unweighted analysis sum with ``m > 0`` doubled."""
    pct = legendre_on_grid(grid, lmax)
    fm = np.fft.rfft(grad_values, axis=-1)[..., : lmax + 1] * _m_weights(lmax)
    out = np.einsum("mli,...im->...lm", pct, fm)
    out[..., 0] = out[..., 0].real
    return out


def sht_adjoint(grad_coeffs: np.ndarray, grid: SphericalGrid) -> np.ndarray:
    """Adjoint of :func:`sht_array`: quadrature-weighted synthesis."""
    lmax = grad_coeffs.shape[-1] - 1
    pct = legendre_on_grid(grid, lmax)
    gm = np.einsum("mli,...lm->...im", pct, grad_coeffs)
    spec = np.zeros(gm.shape[:-1] + (grid.nlon // 2 + 1,), dtype=np.complex128)
    spec[..., : lmax + 1] = gm / _m_weights(lmax)
    spec[..., 0] = spec[..., 0].real
    out = np.fft.irfft(spec * grid.nlon, n=grid.nlon, axis=-1)
    return out * (grid.quad_weights[:, None] * grid.dlon)


def sht(f: Field, lmax: int | None = None) -> SpectralCoeffs:
    if lmax is None:
        lmax = f.grid.lmax
    return SpectralCoeffs(sht_array(f.values, f.grid, lmax))


def isht(c: SpectralCoeffs, grid: SphericalGrid) -> Field:
    return Field(grid, isht_array(c.data, grid))


def truncate(coeffs: np.ndarray, lmax_keep: int) -> np.ndarray:
    """Zero all degrees above ``lmax_keep`` and drop the unused rows/cols."""
    return coeffs[..., : lmax_keep + 1, : lmax_keep + 1]


def resample_array(values, src: SphericalGrid, dst: SphericalGrid, lmax_keep: int) -> np.ndarray:
    if lmax_keep > min(src.lmax, dst.lmax):
        raise ConfigurationError(
            f"lmax_keep={lmax_keep} exceeds min(src.lmax, dst.lmax)={min(src.lmax, dst.lmax)}"
        )
    return isht_array(sht_array(values, src, lmax_keep), dst)


def resample(f: Field, dst: SphericalGrid, lmax_keep: int | None = None) -> Field:
    """Change grids by spectral truncation and re-synthesis (no interpolation)."""
    if lmax_keep is None:
        lmax_keep = min(f.grid.lmax, dst.lmax)
    return Field(dst, resample_array(f.values, f.grid, dst, lmax_keep))


def integral_array(values: np.ndarray, grid: SphericalGrid) -> np.ndarray:
    """``int_{S^2} f`` over the last two axes."""
    ring = values.sum(axis=-1) * grid.dlon
    return ring @ grid.quad_weights


def spherical_integral(f: Field) -> np.ndarray:
    """Per-channel surface integral ``C_f`` (shape ``[..., channels]``).

    This is the integral over the sphere; the extra ``2 pi`` of an integral
    over rotations is absorbed by the learned correction weights.
    """
    return integral_array(f.values, f.grid)


def rotate_z(f: Field, k: int) -> Field:
    """Rotate about the polar axis by ``k`` longitude steps (cyclic shift)."""
    return Field(f.grid, np.roll(f.values, int(k) % f.grid.nlon, axis=-1))


def synthesize_at(coeffs: np.ndarray, theta, phi) -> np.ndarray:
    """Evaluate the real band-limited field ``coeffs[..., l, m]`` at arbitrary
    points. Returns ``[..., *theta.shape]``."""
    from .harmonics import legendre_values

    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    lmax = coeffs.shape[-1] - 1
    p = legendre_values(lmax, np.cos(theta))  # [l, m, *pts]
    pts = theta.shape
    p = p.reshape(lmax + 1, lmax + 1, -1)
    e = np.exp(1j * np.outer(np.arange(lmax + 1), phi.ravel()))  # [m, npts]
    c = coeffs.copy()
    c[..., 0] = c[..., 0].real
    gm = np.einsum("lmp,...lm->...mp", p, c)
    vals = np.einsum("...mp,mp,m->...p", gm, e, _m_weights(lmax)).real
    return vals.reshape(coeffs.shape[:-2] + pts)
