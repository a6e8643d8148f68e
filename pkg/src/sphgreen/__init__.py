"""Spherical harmonic transforms, Green's-function spherical neural operators
(GSNO), the multi-scale GSHNet, and desk-scale operator-learning tasks."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DegenerateError,
    DivergenceError,
    DomainError,
    ShapeError,
    TapeError,
)
from .harmonics import GridKind, SphericalGrid, build_grid, legendre_values, sph_harm
from .transform import Field, SpectralCoeffs, isht, resample, rotate_z, sht, spherical_integral
from .spherical_conv import SpectralSymbol, ZonalKernel, greens_apply, so3_conv_oracle, zonal_conv_spectral
from .gsno import GradientTape, GsnoLayer, gsno_backward, gsno_forward, layer_init, sfno_forward
from .gshnet import GshNet, GshNetConfig, build_gshnet, count_parameters, net_backward, net_forward
from .training import TrainConfig, TrainReport, acc_metric, lat_weighted_mse, train, weighted_relative_loss
from .tasks import FieldDataset, generate, poisson_pair, position_modulated_pair, random_bandlimited
