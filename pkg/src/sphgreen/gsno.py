"""Green's-function spherical neural operator layer.

Spectral core::

    g = ISHT[ G1(l) . (SHT[f](l, m) + C_f * G2(l, m)) ]

``G1[l]`` is a complex ``c_out x c_in`` matrix shared by all orders ``m`` of
degree ``l``; ``G2`` holds one complex weight per ``(l, m, c_in)`` and is
scaled by the surface integral ``C_f`` of each input channel.  With ``G2``
removed the layer is the plain rotation-equivariant spectral (SFNO) layer.

When ``use_mlp`` is set the block adds the channel MLP and the residual path::

    out = W2 . gelu(W1 . g + b1) + b2 + Ws . resample(f)

Gradients are written out by hand; complex parameters get
``dL/dRe + i dL/dIm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ShapeError, TapeError
from .harmonics import SphericalGrid
from .transform import (
    Field,
    integral_array,
    isht_adjoint,
    isht_array,
    sht_adjoint,
    sht_array,
    triangle_indices,
)

__all__ = [
    "GsnoLayer",
    "GradientTape",
    "layer_init",
    "gsno_forward",
    "sfno_forward",
    "gsno_backward",
    "gelu",
    "gelu_grad",
    "default_grid",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def default_grid(lmax: int) -> SphericalGrid:
    return SphericalGrid(lmax + 1, 2 * lmax + 2)


def channel_mix(w, x):
    """``y[b, o, ...] = sum_c w[o, c] x[b, c, ...]`` for 4-D ``x``."""
    b, c = x.shape[:2]
    y = np.matmul(w, x.reshape(b, c, -1))
    return y.reshape((b, w.shape[0]) + x.shape[2:])


def channel_mix_grad(gy, x):
    """Gradient of :func:`channel_mix` w.r.t. the weight matrix."""
    b = gy.shape[0]
    gy2 = gy.reshape(b, gy.shape[1], -1)
    x2 = x.reshape(b, x.shape[1], -1)
    return np.matmul(gy2, x2.transpose(0, 2, 1)).sum(axis=0)


class GradientTape:
    """Ordered record of forward applications for the matching backward pass."""

    def __init__(self):
        self.entries: list[tuple[object, dict]] = []

    def record(self, owner, cache: dict):
        self.entries.append((owner, cache))

    def pop(self, owner) -> dict:
        if not self.entries:
            raise TapeError(f"tape is empty; no forward record for {owner!r}")
        last, cache = self.entries[-1]
        if last is not owner:
            raise TapeError(f"tape out of order: expected {owner!r}, found {last!r}")
        self.entries.pop()
        return cache

    def clear(self):
        self.entries.clear()

    def __len__(self):
        return len(self.entries)


@dataclass(eq=False)
class GsnoLayer:
    lmax: int
    c_in: int
    c_out: int
    G1: np.ndarray
    G2: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Ws: np.ndarray
    grid_in: SphericalGrid
    grid_out: SphericalGrid
    use_correction: bool = True
    use_mlp: bool = True
    name: str = field(default="gsno")

    def __post_init__(self):
        ntri = (self.lmax + 1) * (self.lmax + 2) // 2
        expected = {
            "G1": (self.lmax + 1, self.c_out, self.c_in),
            "G2": (ntri, self.c_in),
            "Ws": (self.c_out, self.c_in),
        }
        for k, shape in expected.items():
            if getattr(self, k).shape != shape:
                raise ShapeError(f"{k} has shape {getattr(self, k).shape}, expected {shape}")
        if self.lmax > min(self.grid_in.lmax, self.grid_out.lmax):
            raise ShapeError(f"layer lmax={self.lmax} exceeds grid capacity")

    def __repr__(self):
        return (
            f"GsnoLayer({self.name}: {self.c_in}->{self.c_out}, lmax={self.lmax}, "
            f"{self.grid_in.nlat}x{self.grid_in.nlon}->{self.grid_out.nlat}x{self.grid_out.nlon}, "
            f"correction={self.use_correction}, mlp={self.use_mlp})"
        )

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def state(self) -> dict[str, np.ndarray]:
        """All parameter arrays, active or not."""
        return {k: getattr(self, k) for k in ("G1", "G2", "W1", "b1", "W2", "b2", "Ws")}

    def parameters(self) -> dict[str, np.ndarray]:
        """Arrays that influence the output under the current flags."""
        p = {"G1": self.G1}
        if self.use_correction:
            p["G2"] = self.G2
        if self.use_mlp:
            p.update(W1=self.W1, b1=self.b1, W2=self.W2, b2=self.b2, Ws=self.Ws)
        return p

    def g2_dense(self) -> np.ndarray:
        """``G2`` as ``[c_in, l, m]`` with zeros for ``m > l``."""
        li, mi = triangle_indices(self.lmax)
        out = np.zeros((self.c_in, self.lmax + 1, self.lmax + 1), dtype=np.complex128)
        out[:, li, mi] = self.G2.T
        return out

    def correction_fields(self) -> np.ndarray:
        """``b[ci] = ISHT[G1 . G2[:, ci]]`` on the output grid, ``[c_in, c_out, nlat, nlon]``.

        The correction term of the output is ``sum_ci C_f[ci] * b[ci]``.
        """
        g2 = self.g2_dense()
        spec = np.einsum("loc,clm->colm", self.G1, g2)
        return isht_array(spec, self.grid_out)

    # -- array level -------------------------------------------------------

    def forward(self, x: np.ndarray, tape: GradientTape | None = None, correction: bool | None = None):
        if x.ndim != 4 or x.shape[1] != self.c_in or x.shape[2:] != self.grid_in.shape:
            raise ShapeError(
                f"{self.name}: expected input [B, {self.c_in}, {self.grid_in.nlat}, "
                f"{self.grid_in.nlon}], got {x.shape}"
            )
        use_corr = self.use_correction if correction is None else correction
        fc = sht_array(x, self.grid_in, self.lmax)
        cf = integral_array(x, self.grid_in)
        u = fc
        if use_corr:
            u = fc + cf[:, :, None, None] * self.g2_dense()[None]
        spec = np.einsum("loc,bclm->bolm", self.G1, u)
        g = isht_array(spec, self.grid_out)
        cache = {"x": x, "u": u, "cf": cf, "g": g, "corr": use_corr}
        if self.use_mlp:
            xr = self._resample(x)
            a = channel_mix(self.W1, g) + self.b1[None, :, None, None]
            z = gelu(a)
            y = channel_mix(self.W2, z) + self.b2[None, :, None, None] + channel_mix(self.Ws, xr)
            cache.update(xr=xr, a=a, z=z)
        else:
            y = g
        if tape is not None:
            tape.record(self, cache)
        return y

    def backward(self, tape: GradientTape, gy: np.ndarray):
        cache = tape.pop(self)
        grads = {}
        if self.use_mlp:
            z, a, g, xr = cache["z"], cache["a"], cache["g"], cache["xr"]
            grads["W2"] = channel_mix_grad(gy, z)
            grads["b2"] = gy.sum(axis=(0, 2, 3))
            grads["Ws"] = channel_mix_grad(gy, xr)
            ga = channel_mix(self.W2.T, gy) * gelu_grad(a)
            grads["W1"] = channel_mix_grad(ga, g)
            grads["b1"] = ga.sum(axis=(0, 2, 3))
            gg = channel_mix(self.W1.T, ga)
            gx_skip = self._resample_adjoint(channel_mix(self.Ws.T, gy))
        else:
            gg = gy
            gx_skip = None

        gspec = isht_adjoint(gg, self.grid_out, self.lmax)
        u = cache["u"]
        grads["G1"] = np.einsum("bolm,bclm->loc", gspec, np.conj(u))
        gu = np.einsum("loc,bolm->bclm", np.conj(self.G1), gspec)
        gx = sht_adjoint(gu, self.grid_in)
        if cache["corr"]:
            li, mi = triangle_indices(self.lmax)
            gg2 = np.einsum("bc,bclm->clm", cache["cf"], gu)
            if self.use_correction:
                grads["G2"] = gg2[:, li, mi].T
            gcf = np.einsum("bclm,clm->bc", gu, np.conj(self.g2_dense())).real
            gx = gx + gcf[:, :, None, None] * self.grid_in.area_weights
        if gx_skip is not None:
            gx = gx + gx_skip
        return gx, {k: np.ascontiguousarray(v) for k, v in grads.items()}

    def _resample(self, x):
        if self.grid_in == self.grid_out:
            return x
        return isht_array(sht_array(x, self.grid_in, self.lmax), self.grid_out)

    def _resample_adjoint(self, g):
        if self.grid_in == self.grid_out:
            return g
        return sht_adjoint(isht_adjoint(g, self.grid_out, self.lmax), self.grid_in)


def layer_init(
    lmax: int,
    c_in: int,
    c_out: int,
    mlp_ratio: float = 2.0,
    seed: int = 0,
    *,
    grid_in: SphericalGrid | None = None,
    grid_out: SphericalGrid | None = None,
    use_correction: bool = True,
    use_mlp: bool = True,
    name: str = "gsno",
    spectral_scale: float = 0.1,
) -> GsnoLayer:
    """Fresh layer: Gaussian ``G1`` (scale ``spectral_scale/sqrt(c_in)``), zero
    ``G2``, Gaussian channel maps (scale ``1/sqrt(fan_in)``), zero biases.

    A small ``G1`` keeps Adam (whose step size is roughly ``lr`` per entry)
    close to the small multipliers typical of smoothing operators.
    """
    if min(c_in, c_out) < 1 or lmax < 0 or mlp_ratio <= 0 or spectral_scale < 0:
        raise ShapeError("layer dimensions must be positive")
    grid_in = grid_in or default_grid(lmax)
    grid_out = grid_out or grid_in
    rng = np.random.default_rng(seed)
    hidden = max(1, int(round(mlp_ratio * c_out)))
    shape = (lmax + 1, c_out, c_in)
    g1 = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (spectral_scale / math.sqrt(2.0 * c_in))
    ntri = (lmax + 1) * (lmax + 2) // 2
    return GsnoLayer(
        lmax=lmax,
        c_in=c_in,
        c_out=c_out,
        G1=g1,
        G2=np.zeros((ntri, c_in), dtype=np.complex128),
        W1=rng.standard_normal((hidden, c_out)) / math.sqrt(c_out),
        b1=np.zeros(hidden),
        W2=rng.standard_normal((c_out, hidden)) / math.sqrt(hidden),
        b2=np.zeros(c_out),
        Ws=rng.standard_normal((c_out, c_in)) / math.sqrt(c_in),
        grid_in=grid_in,
        grid_out=grid_out,
        use_correction=use_correction,
        use_mlp=use_mlp,
        name=name,
    )


def _batched(f: Field):
    lead = f.values.shape[:-3]
    return f.values.reshape((-1,) + f.values.shape[-3:]), lead


def _check_input(layer: GsnoLayer, f: Field):
    if f.grid != layer.grid_in:
        raise ShapeError(f"input grid {f.grid} differs from layer grid {layer.grid_in}")
    if f.channels != layer.c_in:
        raise ShapeError(f"input has {f.channels} channels, layer expects {layer.c_in}")


def gsno_forward(layer: GsnoLayer, f: Field, tape: GradientTape | None = None) -> Field:
    _check_input(layer, f)
    x, lead = _batched(f)
    y = layer.forward(x, tape)
    return Field(layer.grid_out, y.reshape(lead + y.shape[1:]))


def sfno_forward(layer: GsnoLayer, f: Field, tape: GradientTape | None = None) -> Field:
    """Same layer with the correction term switched off."""
    _check_input(layer, f)
    x, lead = _batched(f)
    y = layer.forward(x, tape, correction=False)
    return Field(layer.grid_out, y.reshape(lead + y.shape[1:]))


def gsno_backward(layer: GsnoLayer, f: Field, grad_out: Field, tape: GradientTape):
    """Reverse pass for the last recorded forward of ``layer`` on ``f``.

    Returns ``(grad_f, grads)`` with ``grads`` keyed like ``layer.parameters()``.
    """
    if not tape.entries or tape.entries[-1][0] is not layer:
        raise TapeError(f"no pending forward record for {layer!r}")
    x, lead = _batched(f)
    cached = tape.entries[-1][1]["x"]
    if cached.shape != x.shape or not np.array_equal(cached, x):
        raise TapeError("tape was recorded for a different input field")
    gy = grad_out.values.reshape((-1,) + grad_out.values.shape[-3:])
    gx, grads = layer.backward(tape, gy)
    return Field(layer.grid_in, gx.reshape(lead + gx.shape[1:])), grads
