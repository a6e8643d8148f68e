"""Synthetic operator-learning datasets on the sphere.

``poisson``
    input ``f`` (mean-free), target ``g`` solving ``Laplace(g) = f``.
``position``
    target ``ISHT[s . SHT f] + (C_f / 4 pi) * terrain``: an equivariant filter
    plus a fixed, absolute-position pattern scaled by the input's surface
    integral.  It lies inside the GSNO class and outside the purely
    equivariant one.
``position-hard``
    as ``position`` but ``f`` is first multiplied by ``1 + terrain/2``.

All generators are pure functions of their seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError
from .harmonics import SphericalGrid, build_grid
from .spherical_conv import SpectralSymbol, inverse_laplacian_symbol, laplace_beltrami_symbol
from .transform import (
    Field,
    integral_array,
    isht_array,
    rotate_z,
    sht_array,
    triangle_mask,
)

__all__ = [
    "FieldDataset",
    "TASKS",
    "random_coeffs",
    "random_bandlimited",
    "make_terrain",
    "poisson_pair",
    "position_modulated_pair",
    "generate",
    "rotation_augment",
]

TASKS = ("poisson", "position", "position-hard")
FOUR_PI = 4.0 * np.pi


@dataclass
class FieldDataset:
    """Stacked input/target fields ``[n, channels, nlat, nlon]``."""

    inputs: Field
    targets: Field
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.values.ndim != 4 or self.targets.values.ndim != 4:
            raise ShapeError("dataset fields must be stacked as [n, channels, nlat, nlon]")
        if self.inputs.values.shape[0] != self.targets.values.shape[0]:
            raise ShapeError("inputs and targets have different lengths")

    def __len__(self):
        return self.inputs.values.shape[0]

    def __getitem__(self, i):
        return (
            Field(self.inputs.grid, self.inputs.values[i]),
            Field(self.targets.grid, self.targets.values[i]),
        )

    def split(self, n_first: int) -> tuple["FieldDataset", "FieldDataset"]:
        a = FieldDataset(
            Field(self.inputs.grid, self.inputs.values[:n_first]),
            Field(self.targets.grid, self.targets.values[:n_first]),
            dict(self.meta),
        )
        b = FieldDataset(
            Field(self.inputs.grid, self.inputs.values[n_first:]),
            Field(self.targets.grid, self.targets.values[n_first:]),
            dict(self.meta),
        )
        return a, b


def random_coeffs(lmax: int, shape: tuple, spectrum_slope: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian coefficients ``[*shape, l, m]`` with ``E|c_lm|^2 = (1+l)^(-2 slope)``.

    ``m = 0`` entries are real; ``m > 0`` entries are complex with unit
    variance split over the two parts.
    """
    full = tuple(shape) + (lmax + 1, lmax + 1)
    re = rng.standard_normal(full)
    im = rng.standard_normal(full)
    c = (re + 1j * im) / np.sqrt(2.0)
    c[..., 0] = re[..., 0]
    c[..., ~triangle_mask(lmax)] = 0.0
    l = np.arange(lmax + 1, dtype=np.float64)
    return c * ((1.0 + l) ** (-spectrum_slope))[:, None]


def random_bandlimited(
    lmax: int,
    channels: int = 1,
    spectrum_slope: float = 0.0,
    seed: int = 0,
    grid: SphericalGrid | None = None,
    mean_free: bool = False,
    count: int | None = None,
) -> Field:
    """Random real field of bandwidth ``lmax``; ``count`` stacks independent draws."""
    if lmax < 1:
        raise ConfigurationError("random_bandlimited needs lmax >= 1")
    grid = grid or build_grid(lmax + 1, 2 * lmax + 2)
    if grid.lmax < lmax:
        raise ConfigurationError(f"{grid} cannot hold degree {lmax}")
    rng = np.random.default_rng(seed)
    shape = (channels,) if count is None else (count, channels)
    c = random_coeffs(lmax, shape, spectrum_slope, rng)
    if mean_free:
        c[..., 0, 0] = 0.0
    return Field(grid, isht_array(c, grid))


def make_terrain(grid: SphericalGrid, kind: str = "random", seed: int = 1234, lmax: int = 4, scale: float = 1.0) -> Field:
    """Fixed single-channel "topography" of bandwidth ``lmax`` with zero mean.

    ``random`` draws a seeded band-limited field (spectral slope 1);
    ``two-cap`` projects two Gaussian bumps (one raised, one sunken) onto
    degrees ``1..lmax``.
    """
    lmax = min(lmax, grid.lmax)
    if kind == "random":
        c = random_coeffs(lmax, (1,), 1.0, np.random.default_rng(seed))
    elif kind == "two-cap":
        fine = build_grid(4 * (lmax + 1), 8 * (lmax + 1) + 1)
        th, ph = np.meshgrid(fine.colatitudes, fine.longitudes, indexing="ij")

        def cap(theta0, phi0, width):
            cosd = np.cos(th) * np.cos(theta0) + np.sin(th) * np.sin(theta0) * np.cos(ph - phi0)
            return np.exp((cosd - 1.0) / width**2)

        bumps = cap(np.pi / 3, np.pi / 2, 0.5) - 0.7 * cap(2 * np.pi / 3, 3 * np.pi / 2, 0.4)
        c = sht_array(bumps[None], fine, lmax)
    else:
        raise ConfigurationError(f"unknown terrain kind {kind!r}")
    c[..., 0, 0] = 0.0
    return Field(grid, scale * isht_array(c, grid))


def poisson_pair(f: Field) -> tuple[Field, Field]:
    """``(f0, g)`` with ``f0`` the mean-free part of ``f`` and ``Laplace(g) = f0``."""
    lmax = f.grid.lmax
    c = sht_array(f.values, f.grid, lmax)
    c[..., 0, 0] = 0.0
    s = inverse_laplacian_symbol(lmax).as_modes()
    return Field(f.grid, isht_array(c, f.grid)), Field(f.grid, isht_array(s * c, f.grid))


def apply_symbol(f: Field, s: SpectralSymbol) -> Field:
    lmax = min(f.grid.lmax, s.lmax)
    c = sht_array(f.values, f.grid, lmax)
    sym = s.as_modes()[: lmax + 1]
    if s.per_mode:
        sym = sym[:, : lmax + 1]
    return Field(f.grid, isht_array(sym * c, f.grid))


def position_modulated_pair(f: Field, terrain: Field, s: SpectralSymbol, hard: bool = False) -> tuple[Field, Field]:
    """``(f, ISHT[s . SHT f] + (C_f / 4 pi) * terrain)``.

    ``terrain`` has one channel (shared) or as many as ``f``.
    """
    if terrain.grid != f.grid:
        raise ShapeError("terrain must live on the input grid")
    if terrain.channels not in (1, f.channels):
        raise ShapeError("terrain needs one channel or one per input channel")
    src = f
    if hard:
        src = Field(f.grid, f.values * (1.0 + 0.5 * terrain.values))
    equivariant = apply_symbol(src, s).values
    cf = integral_array(f.values, f.grid)
    g = equivariant + (cf / FOUR_PI)[..., None, None] * terrain.values
    return f, Field(f.grid, g)


def default_symbol(task: str, lmax: int) -> SpectralSymbol:
    return inverse_laplacian_symbol(lmax)


def generate(
    task: str,
    n: int,
    lmax: int,
    seed: int = 0,
    channels: int = 1,
    spectrum_slope: float = 0.0,
    grid: SphericalGrid | None = None,
    terrain_kind: str = "random",
    terrain_seed: int = 1234,
    terrain_lmax: int = 4,
    terrain_scale: float = 1.0,
) -> FieldDataset:
    """Build ``n`` input/target pairs for ``task`` (one of :data:`TASKS`)."""
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}; choose from {TASKS}")
    grid = grid or build_grid(lmax + 1, 2 * lmax + 2)
    f = random_bandlimited(lmax, channels, spectrum_slope, seed, grid=grid, count=n)
    meta = {
        "task": task,
        "n": n,
        "lmax": lmax,
        "seed": seed,
        "channels": channels,
        "spectrum_slope": spectrum_slope,
        "nlat": grid.nlat,
        "nlon": grid.nlon,
        "grid_kind": grid.kind.value,
        "shifts": [],
    }
    if task == "poisson":
        x, y = poisson_pair(f)
    else:
        terrain = make_terrain(grid, terrain_kind, terrain_seed, terrain_lmax, terrain_scale)
        meta.update(
            terrain_kind=terrain_kind,
            terrain_seed=terrain_seed,
            terrain_lmax=terrain_lmax,
            terrain_scale=terrain_scale,
        )
        x, y = position_modulated_pair(f, terrain, default_symbol(task, lmax), hard=task == "position-hard")
    return FieldDataset(x, y, meta)


def _targets_for(meta: dict, x: Field) -> Field:
    task = meta["task"]
    if task == "poisson":
        return poisson_pair(x)[1]
    terrain = make_terrain(
        x.grid, meta["terrain_kind"], meta["terrain_seed"], meta["terrain_lmax"], meta["terrain_scale"]
    )
    return position_modulated_pair(x, terrain, default_symbol(task, meta["lmax"]), hard=task == "position-hard")[1]


def rotation_augment(ds: FieldDataset, shifts) -> FieldDataset:
    """Append z-rotated copies of every pair, one block per shift.

    Targets are rebuilt from the rotated inputs; for the position tasks the
    terrain stays put, so they differ from naively rotated targets.
    """
    grid = ds.inputs.grid
    xs, ys = [ds.inputs.values], [ds.targets.values]
    for k in shifts:
        if not 0 <= k < grid.nlon:
            raise ConfigurationError(f"shift {k} outside [0, {grid.nlon})")
        xr = rotate_z(ds.inputs, k)
        xs.append(xr.values)
        ys.append(_targets_for(ds.meta, xr).values)
    meta = dict(ds.meta)
    meta["shifts"] = list(meta.get("shifts", [])) + [int(k) for k in shifts]
    return FieldDataset(Field(grid, np.concatenate(xs)), Field(grid, np.concatenate(ys)), meta)


def forward_laplacian(g: Field) -> Field:
    """Apply the spectral Laplace-Beltrami operator."""
    return apply_symbol(g, laplace_beltrami_symbol(g.grid.lmax))
