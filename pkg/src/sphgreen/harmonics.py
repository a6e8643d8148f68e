"""Quadrature grids, associated Legendre functions and point evaluation of
spherical harmonics.

Conventions used everywhere in the package:

* harmonics are orthonormal on the unit sphere,
  ``Y_l^m(theta, phi) = Pbar_l^m(cos theta) * exp(i m phi)``;
* the Condon-Shortley phase ``(-1)^m`` is part of ``Pbar_l^m``;
* ``theta`` is colatitude in ``[0, pi]``, ``phi`` longitude in ``[0, 2 pi)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "GridKind",
    "SphericalGrid",
    "LegendreTable",
    "gauss_legendre_nodes",
    "assoc_legendre",
    "legendre_values",
    "sph_harm",
    "build_grid",
    "legendre_on_grid",
]

Y00 = 1.0 / math.sqrt(4.0 * math.pi)


class GridKind(enum.Enum):
    GAUSS_LEGENDRE = "gauss"
    EQUIANGULAR = "equiangular"

    @classmethod
    def parse(cls, value) -> "GridKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "gauss": cls.GAUSS_LEGENDRE,
            "gausslegendre": cls.GAUSS_LEGENDRE,
            "legendregauss": cls.GAUSS_LEGENDRE,
            "equiangular": cls.EQUIANGULAR,
            "equi": cls.EQUIANGULAR,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigurationError(f"unknown grid kind {value!r}") from None

    @property
    def code(self) -> int:
        return 0 if self is GridKind.GAUSS_LEGENDRE else 1

    @classmethod
    def from_code(cls, code: int) -> "GridKind":
        if code == 0:
            return cls.GAUSS_LEGENDRE
        if code == 1:
            return cls.EQUIANGULAR
        raise ConfigurationError(f"unknown grid kind code {code}")


def gauss_legendre_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes (ascending) and weights on ``[-1, 1]``."""
    if int(n) != n or n < 1:
        raise ConfigurationError(f"number of Gauss nodes must be a positive integer, got {n}")
    nodes, weights = np.polynomial.legendre.leggauss(int(n))
    return nodes, weights


def _fejer_weights(n: int) -> np.ndarray:
    # Fejer's first rule on midpoint colatitudes; exact for polynomials in
    # cos(theta) of degree < n.
    theta = (np.arange(n) + 0.5) * np.pi / n
    j = np.arange(1, n // 2 + 1)
    series = np.cos(2.0 * np.outer(theta, j)) / (4.0 * j**2 - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * series.sum(axis=1))


@dataclass(frozen=True)
class SphericalGrid:
    """Colatitude rings times uniformly spaced longitudes.

    ``quad_weights`` integrate over ``cos(theta)`` (they sum to 2); the
    longitude weight ``2 pi / nlon`` is applied where integrals are formed.
    """

    nlat: int
    nlon: int
    kind: GridKind = GridKind.GAUSS_LEGENDRE

    def __post_init__(self):
        object.__setattr__(self, "kind", GridKind.parse(self.kind))
        if self.nlat < 2:
            raise ConfigurationError(f"nlat must be >= 2, got {self.nlat}")
        if self.nlon < 2 * self.lmax + 1:
            raise ConfigurationError(
                f"nlon={self.nlon} violates the longitudinal Nyquist limit "
                f"2*lmax+1={2 * self.lmax + 1} for nlat={self.nlat}"
            )

    @property
    def lmax(self) -> int:
        # Exact for Gauss grids; only nominal for equiangular ones.
        return self.nlat - 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @cached_property
    def _nodes(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind is GridKind.GAUSS_LEGENDRE:
            x, w = gauss_legendre_nodes(self.nlat)
            # descending cos(theta) gives increasing colatitude
            theta, w = np.arccos(x[::-1]), w[::-1]
        else:
            theta = (np.arange(self.nlat) + 0.5) * np.pi / self.nlat
            w = _fejer_weights(self.nlat)
        theta.setflags(write=False)
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        return theta, w

    @property
    def colatitudes(self) -> np.ndarray:
        return self._nodes[0]

    @property
    def quad_weights(self) -> np.ndarray:
        return self._nodes[1]

    @cached_property
    def longitudes(self) -> np.ndarray:
        phi = 2.0 * np.pi * np.arange(self.nlon) / self.nlon
        phi.setflags(write=False)
        return phi

    @property
    def latitudes(self) -> np.ndarray:
        return 0.5 * np.pi - self.colatitudes

    @property
    def dlon(self) -> float:
        return 2.0 * np.pi / self.nlon

    @cached_property
    def area_weights(self) -> np.ndarray:
        """Full 2-D quadrature weights ``[nlat, nlon]`` (sum to 4 pi)."""
        a = np.repeat((self.quad_weights * self.dlon)[:, None], self.nlon, axis=1)
        a.setflags(write=False)
        return a

    def half(self) -> "SphericalGrid":
        """Grid with half the rings and (rounded up) half the longitudes."""
        if self.nlat % 2:
            raise ConfigurationError(f"cannot halve a grid with nlat={self.nlat}")
        return SphericalGrid(self.nlat // 2, -(-self.nlon // 2), self.kind)

    def __repr__(self) -> str:
        return f"SphericalGrid({self.nlat}x{self.nlon}, {self.kind.value})"


def build_grid(nlat: int, nlon: int, kind="gauss") -> SphericalGrid:
    return SphericalGrid(int(nlat), int(nlon), GridKind.parse(kind))


@dataclass(frozen=True)
class LegendreTable:
    """Fully normalized ``Pbar_l^m(x)`` stored as ``values[l, m, ...]``.

    Entries with ``m > l`` are zero.
    """

    lmax: int
    values: np.ndarray

    def __getitem__(self, lm):
        l, m = lm
        if not 0 <= m <= l <= self.lmax:
            raise DomainError(f"(l, m)=({l}, {m}) outside table with lmax={self.lmax}")
        return self.values[l, m]


def legendre_values(lmax: int, x) -> np.ndarray:
    """Array ``[lmax+1, lmax+1, *x.shape]`` of ``Pbar_l^m(x)``.

    Diagonal terms come from the running product
    ``Pbar_m^m = -sqrt((2m+1)/(2m)) sqrt(1-x^2) Pbar_{m-1}^{m-1}``, then each
    column is filled upward in ``l`` with the normalized three-term recurrence.
    """
    if lmax < 0:
        raise DomainError(f"lmax must be >= 0, got {lmax}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        raise DomainError("associated Legendre functions need |x| <= 1")
    s = np.sqrt(np.clip((1.0 - x) * (1.0 + x), 0.0, None))
    out = np.zeros((lmax + 1, lmax + 1) + x.shape)

    pmm = np.full(x.shape, Y00)
    for m in range(lmax + 1):
        if m > 0:
            pmm = -math.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
        out[m, m] = pmm
        if m + 1 > lmax:
            break
        out[m + 1, m] = math.sqrt(2.0 * m + 3.0) * x * pmm
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            out[l, m] = a * (x * out[l - 1, m] - b * out[l - 2, m])
    return out


def assoc_legendre(lmax: int, x) -> LegendreTable:
    return LegendreTable(int(lmax), legendre_values(int(lmax), x))


def sph_harm(l: int, m: int, theta, phi):
    """Orthonormal ``Y_l^m(theta, phi)``; negative ``m`` via conjugate symmetry."""
    if l < 0 or abs(m) > l:
        raise DomainError(f"need 0 <= |m| <= l, got l={l}, m={m}")
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    am = abs(m)
    p = legendre_values(l, np.cos(theta))[l, am]
    y = p * np.exp(1j * am * phi)
    if m < 0:
        y = (-1) ** am * np.conj(y)
    if y.ndim == 0:
        return complex(y)
    return y


@lru_cache(maxsize=64)
def legendre_on_grid(grid: SphericalGrid, lmax: int) -> np.ndarray:
    """Cached ``Pbar`` table at the grid's rings, laid out ``[m, l, nlat]``."""
    table = legendre_values(lmax, np.cos(grid.colatitudes))
    table = np.ascontiguousarray(np.transpose(table, (1, 0, 2)))
    table.setflags(write=False)
    return table
