"""Spherical convolution: the spectral product rule, a brute-force rotation
group quadrature to check it against, and fixed spectral symbols (Green's
function multipliers) such as the inverse Laplace-Beltrami operator.

The rotation group measure is ``dR = sin(beta) d alpha d beta d gamma`` for
``R = Rz(alpha) Ry(beta) Rz(gamma)``, total volume ``8 pi^2``.  With that
normalization the convolution

    (f * h)(w) = int_{SO(3)} f(R n) h(R^{-1} w) dR

has coefficients ``2 pi sqrt(4 pi / (2l+1)) h[l, 0] f[l, m]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .harmonics import gauss_legendre_nodes
from .transform import Field, SpectralCoeffs, sht_array, synthesize_at

__all__ = [
    "ZonalKernel",
    "SpectralSymbol",
    "conv_prefactor",
    "zonal_part",
    "zonal_conv_spectral",
    "so3_conv_oracle",
    "greens_apply",
    "laplace_beltrami_symbol",
    "inverse_laplacian_symbol",
    "heat_symbol",
]

ORACLE_MAX_LMAX = 6


def conv_prefactor(lmax: int) -> np.ndarray:
    """``2 pi sqrt(4 pi / (2l + 1))`` for ``l = 0..lmax``."""
    l = np.arange(lmax + 1)
    return 2.0 * np.pi * np.sqrt(4.0 * np.pi / (2.0 * l + 1.0))


@dataclass(frozen=True)
class ZonalKernel:
    """The ``m = 0`` column ``h[..., l]`` of a kernel's coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if not np.all(np.isfinite(c)):
            raise ValueError("zonal kernel coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def lmax(self) -> int:
        return self.coeffs.shape[-1] - 1


@dataclass(frozen=True)
class SpectralSymbol:
    """Per-degree multiplier ``s[l]`` or per-mode multiplier ``s[l, m]``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim not in (1, 2):
            raise ShapeError("symbol must be s[l] or s[l, m]")
        if not np.all(np.isfinite(v)):
            raise ValueError("symbol entries must be finite")
        object.__setattr__(self, "values", v)

    @property
    def lmax(self) -> int:
        return self.values.shape[0] - 1

    @property
    def per_mode(self) -> bool:
        return self.values.ndim == 2

    def as_modes(self) -> np.ndarray:
        """Broadcastable ``[l, m]`` array."""
        if self.per_mode:
            return self.values
        return self.values[:, None]

    def __matmul__(self, other: "SpectralSymbol") -> "SpectralSymbol":
        a, b = self.as_modes(), other.as_modes()
        if not (self.per_mode or other.per_mode):
            return SpectralSymbol(self.values * other.values)
        return SpectralSymbol(np.broadcast_to(a * b, (a.shape[0], a.shape[0])).copy())


def laplace_beltrami_symbol(lmax: int) -> SpectralSymbol:
    l = np.arange(lmax + 1)
    return SpectralSymbol(-(l * (l + 1.0)))


def inverse_laplacian_symbol(lmax: int) -> SpectralSymbol:
    """Green's symbol of the Laplace-Beltrami operator; ``s[0] = 0`` (mean-free)."""
    l = np.arange(lmax + 1, dtype=np.float64)
    s = np.zeros(lmax + 1)
    s[1:] = -1.0 / (l[1:] * (l[1:] + 1.0))
    return SpectralSymbol(s)


def heat_symbol(lmax: int, t: float) -> SpectralSymbol:
    l = np.arange(lmax + 1, dtype=np.float64)
    return SpectralSymbol(np.exp(-t * l * (l + 1.0)))


def zonal_part(c: SpectralCoeffs) -> ZonalKernel:
    return ZonalKernel(c.data[..., :, 0])


def zonal_conv_spectral(fc: SpectralCoeffs, h: ZonalKernel) -> SpectralCoeffs:
    """Coefficients of ``f * h`` via the product rule."""
    if h.lmax < fc.lmax:
        raise ShapeError(f"kernel lmax={h.lmax} shorter than input lmax={fc.lmax}")
    hl = h.coeffs[..., : fc.lmax + 1] * conv_prefactor(fc.lmax)
    return SpectralCoeffs(hl[..., :, None] * fc.data)


def greens_apply(s: SpectralSymbol, fc: SpectralCoeffs) -> SpectralCoeffs:
    if s.lmax < fc.lmax:
        raise ShapeError(f"symbol lmax={s.lmax} shorter than coefficient lmax={fc.lmax}")
    sym = s.as_modes()[: fc.lmax + 1]
    if s.per_mode:
        sym = sym[:, : fc.lmax + 1]
    return SpectralCoeffs(sym * fc.data)


def _bandwidth(coeffs: np.ndarray, rtol: float = 1e-12) -> int:
    mag = np.abs(coeffs).reshape(-1, coeffs.shape[-2], coeffs.shape[-1]).max(axis=(0, 2))
    live = np.nonzero(mag > rtol * max(mag.max(), 1e-300))[0]
    return int(live[-1]) if live.size else 0


def so3_conv_oracle(
    f: Field,
    h: Field,
    euler_res: tuple[int, int, int] = (24, 12, 24),
    lmax: int | None = None,
    allow_large: bool = False,
    chunk: int = 8,
) -> Field:
    """Spherical convolution by direct quadrature over Euler angles.

    ``alpha`` and ``gamma`` use the trapezoid rule, ``beta`` Gauss-Legendre in
    ``cos(beta)``.  ``f`` and ``h`` are evaluated off-grid through their
    band-limited expansions (degree ``lmax``; detected from the data if not
    given).  ``h`` may have one channel or as many as ``f``.
    """
    if f.grid != h.grid:
        raise ShapeError("f and h must share a grid")
    if h.channels not in (1, f.channels):
        raise ShapeError(f"h has {h.channels} channels, f has {f.channels}")
    grid = f.grid
    fc = sht_array(f.values, grid, grid.lmax)
    hc = sht_array(h.values, grid, grid.lmax)
    if lmax is None:
        lmax = max(_bandwidth(fc), _bandwidth(hc))
    if lmax > ORACLE_MAX_LMAX and not allow_large:
        raise ConfigurationError(
            f"so3_conv_oracle is brute force; lmax={lmax} > {ORACLE_MAX_LMAX} refused "
            "(pass allow_large=True to override)"
        )
    fc, hc = fc[..., : lmax + 1, : lmax + 1], hc[..., : lmax + 1, : lmax + 1]

    na, nb, ng = euler_res
    alpha = 2.0 * np.pi * np.arange(na) / na
    gamma = 2.0 * np.pi * np.arange(ng) / ng
    cosb, wb = gauss_legendre_nodes(nb)
    beta = np.arccos(cosb)
    sinb = np.sqrt(1.0 - cosb**2)
    # weight per (alpha, beta, gamma) node; sums to 8 pi^2
    w_ab = (2.0 * np.pi / na) * (2.0 * np.pi / ng) * wb

    # f(R n) depends on (alpha, beta) only: R n sits at colatitude beta, longitude alpha
    bb, aa = np.meshgrid(beta, alpha, indexing="ij")
    f_rn = synthesize_at(fc, bb, aa)  # [..., C, nb, na]

    th, ph = np.meshgrid(grid.colatitudes, grid.longitudes, indexing="ij")
    th, ph = th.ravel(), ph.ravel()
    out = np.empty(f.values.shape[:-2] + (th.size,))
    for start in range(0, th.size, chunk):
        t = th[start : start + chunk][:, None, None]
        p = ph[start : start + chunk][:, None, None] - alpha[None, None, :]  # Rz(-alpha) w
        x, y, z = np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t) * np.ones_like(p)
        cb, sb = cosb[None, :, None], sinb[None, :, None]
        # Ry(-beta)
        xr, zr = cb * x - sb * z, sb * x + cb * z
        theta_r = np.arccos(np.clip(zr, -1.0, 1.0))
        phi_r = np.arctan2(y * np.ones_like(xr), xr)
        # Rz(-gamma)
        theta_full = np.broadcast_to(theta_r[..., None], theta_r.shape + (ng,))
        phi_full = phi_r[..., None] - gamma
        h_val = synthesize_at(hc, theta_full, phi_full)  # [..., Ch, k, nb, na, ng]
        inner = h_val.sum(axis=-1)  # over gamma
        total = np.einsum("...ba,...kba,b->...k", f_rn, inner, w_ab)
        out[..., start : start + chunk] = total
    return Field(grid, out.reshape(f.values.shape))
