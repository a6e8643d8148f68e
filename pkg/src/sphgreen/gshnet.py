"""Depth-2 multi-scale network of GSNO blocks.

Data flow (``C`` = embedding width)::

    h0 = encoder(x) + pos                    full grid,    C
    h1 = block1(h0)                          half grid,   2C
    h2 = block2(h1)                          quarter grid, 4C
    h3 = block3(h2) + h1                     half grid,   2C
    h4 = block4(h3) + h0                     full grid,    C
    h5 = out_block(h4)                       full grid,    C
    y  = decoder(concat(h5, x))              full grid, c_out

Grid changes happen inside the blocks by synthesizing onto the destination
grid with the smaller of the two bandwidths.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .gsno import GradientTape, GsnoLayer, channel_mix, channel_mix_grad, layer_init
from .harmonics import GridKind, SphericalGrid
from .transform import Field

__all__ = [
    "GshNetConfig",
    "GshNet",
    "build_gshnet",
    "net_forward",
    "net_backward",
    "count_parameters",
    "expected_parameter_count",
]


@dataclass(frozen=True)
class GshNetConfig:
    c_in: int = 3
    c_out: int = 3
    embed: int = 8
    nlat: int = 16
    nlon: int = 33
    grid_kind: str = "gauss"
    mlp_ratio: float = 2.0
    pos_enc: bool = True
    use_correction: bool = True
    use_mlp: bool = True

    @property
    def depth(self) -> int:
        return 2

    def grids(self) -> tuple[SphericalGrid, SphericalGrid, SphericalGrid]:
        if self.nlat % 4:
            raise ConfigurationError(f"nlat={self.nlat} is not divisible by 4")
        full = SphericalGrid(self.nlat, self.nlon, GridKind.parse(self.grid_kind))
        half = full.half()
        return full, half, half.half()

    def widths(self) -> tuple[int, int, int, int, int]:
        c = self.embed
        return (c, 2 * c, 4 * c, 2 * c, c)


class _DecoderMark:
    def __repr__(self):
        return "decoder"


class GshNet:
    def __init__(self, cfg: GshNetConfig, encoder_w, encoder_b, pos, blocks, out_block, decoder_w, decoder_b):
        self.cfg = cfg
        self.encoder_w = encoder_w
        self.encoder_b = encoder_b
        self.pos = pos
        self.blocks = list(blocks)
        self.out_block = out_block
        self.decoder_w = decoder_w
        self.decoder_b = decoder_b
        self.grid_in = self.grid_out = cfg.grids()[0]
        self.c_in, self.c_out = cfg.c_in, cfg.c_out
        self._dec = _DecoderMark()

    def __repr__(self):
        return f"GshNet({self.cfg})"

    def layers(self) -> dict[str, GsnoLayer]:
        named = {f"block{i + 1}": b for i, b in enumerate(self.blocks)}
        named["out"] = self.out_block
        return named

    def state(self) -> dict[str, np.ndarray]:
        s = {"encoder.W": self.encoder_w, "encoder.b": self.encoder_b, "pos": self.pos}
        for name, layer in self.layers().items():
            s.update({f"{name}.{k}": v for k, v in layer.state().items()})
        s.update({"decoder.W": self.decoder_w, "decoder.b": self.decoder_b})
        return s

    def parameters(self) -> dict[str, np.ndarray]:
        p = {"encoder.W": self.encoder_w, "encoder.b": self.encoder_b}
        if self.cfg.pos_enc:
            p["pos"] = self.pos
        for name, layer in self.layers().items():
            p.update({f"{name}.{k}": v for k, v in layer.parameters().items()})
        p.update({"decoder.W": self.decoder_w, "decoder.b": self.decoder_b})
        return p

    def forward(self, x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.c_in or x.shape[2:] != self.grid_in.shape:
            raise ShapeError(f"expected [B, {self.c_in}, {self.grid_in.nlat}, {self.grid_in.nlon}], got {x.shape}")
        if tape is not None:
            tape.record(self, {"x": x})
        b1, b2, b3, b4 = self.blocks
        h0 = channel_mix(self.encoder_w, x) + self.encoder_b[None, :, None, None]
        if self.cfg.pos_enc:
            h0 = h0 + self.pos[None]
        h1 = b1.forward(h0, tape)
        h2 = b2.forward(h1, tape)
        h3 = b3.forward(h2, tape) + h1
        h4 = b4.forward(h3, tape) + h0
        h5 = self.out_block.forward(h4, tape)
        cat = np.concatenate([h5, x], axis=1)
        if tape is not None:
            tape.record(self._dec, {"cat": cat})
        return channel_mix(self.decoder_w, cat) + self.decoder_b[None, :, None, None]

    def backward(self, tape: GradientTape, gy: np.ndarray):
        grads = {}
        cat = tape.pop(self._dec)["cat"]
        grads["decoder.W"] = channel_mix_grad(gy, cat)
        grads["decoder.b"] = gy.sum(axis=(0, 2, 3))
        gcat = channel_mix(self.decoder_w.T, gy)
        c = self.cfg.embed
        gh5, gx = gcat[:, :c], gcat[:, c:]

        def run(name, layer, g):
            gin, lg = layer.backward(tape, g)
            grads.update({f"{name}.{k}": v for k, v in lg.items()})
            return gin

        b1, b2, b3, b4 = self.blocks
        gh4 = run("out", self.out_block, gh5)
        gh3 = run("block4", b4, gh4)
        gh2 = run("block3", b3, gh3)
        gh1 = run("block2", b2, gh2) + gh3
        gh0 = run("block1", b1, gh1) + gh4
        x = tape.pop(self)["x"]
        if self.cfg.pos_enc:
            grads["pos"] = gh0.sum(axis=0)
        grads["encoder.W"] = channel_mix_grad(gh0, x)
        grads["encoder.b"] = gh0.sum(axis=(0, 2, 3))
        gx = gx + channel_mix(self.encoder_w.T, gh0)
        return gx, grads


def build_gshnet(cfg: GshNetConfig, seed: int = 0) -> GshNet:
    if cfg.embed < 1 or cfg.c_in < 1 or cfg.c_out < 1:
        raise ConfigurationError("channel counts must be positive")
    full, half, quarter = cfg.grids()
    c1, c2, c4, _, _ = cfg.widths()
    seeds = np.random.SeedSequence(seed).generate_state(7)
    rng = np.random.default_rng(seeds[0])
    kw = dict(mlp_ratio=cfg.mlp_ratio, use_correction=cfg.use_correction, use_mlp=cfg.use_mlp)
    plan = [
        ("block1", full, half, c1, c2),
        ("block2", half, quarter, c2, c4),
        ("block3", quarter, half, c4, c2),
        ("block4", half, full, c2, c1),
    ]
    blocks = [
        layer_init(min(gi.lmax, go.lmax), ci, co, seed=int(s), grid_in=gi, grid_out=go, name=n, **kw)
        for (n, gi, go, ci, co), s in zip(plan, seeds[1:5])
    ]
    out_block = layer_init(full.lmax, c1, c1, seed=int(seeds[5]), grid_in=full, grid_out=full, name="out", **kw)
    dec_rng = np.random.default_rng(seeds[6])
    return GshNet(
        cfg,
        encoder_w=rng.standard_normal((c1, cfg.c_in)) / math.sqrt(cfg.c_in),
        encoder_b=np.zeros(c1),
        pos=np.zeros((c1,) + full.shape),
        blocks=blocks,
        out_block=out_block,
        decoder_w=dec_rng.standard_normal((cfg.c_out, c1 + cfg.c_in)) / math.sqrt(c1 + cfg.c_in),
        decoder_b=np.zeros(cfg.c_out),
    )


def net_forward(net: GshNet, x: Field, tape: GradientTape | None = None) -> Field:
    if x.grid != net.grid_in:
        raise ShapeError(f"input grid {x.grid} differs from network grid {net.grid_in}")
    lead = x.values.shape[:-3]
    y = net.forward(x.values.reshape((-1,) + x.values.shape[-3:]), tape)
    return Field(net.grid_out, y.reshape(lead + y.shape[1:]))


def net_backward(net: GshNet, tape: GradientTape, grad_out: Field):
    """Parameter gradients (and the input gradient) for the last recorded forward."""
    lead = grad_out.values.shape[:-3]
    gy = grad_out.values.reshape((-1,) + grad_out.values.shape[-3:])
    gx, grads = net.backward(tape, gy)
    return grads, Field(net.grid_in, gx.reshape(lead + gx.shape[1:]))


def count_parameters(model) -> int:
    """Real degrees of freedom among active parameters (complex entries count twice)."""
    return int(sum(p.size * (2 if np.iscomplexobj(p) else 1) for p in model.parameters().values()))


def expected_parameter_count(cfg: GshNetConfig) -> int:
    """Closed form of :func:`count_parameters` for a freshly built network."""
    n = cfg.nlat
    c1, c2, c4, _, _ = cfg.widths()
    hidden = lambda co: max(1, int(round(cfg.mlp_ratio * co)))

    def block(lmax, ci, co):
        total = 2 * (lmax + 1) * co * ci
        if cfg.use_correction:
            total += 2 * ((lmax + 1) * (lmax + 2) // 2) * ci
        if cfg.use_mlp:
            h = hidden(co)
            total += h * co + h + co * h + co + co * ci
        return total

    total = c1 * cfg.c_in + c1
    if cfg.pos_enc:
        total += c1 * n * cfg.nlon
    total += block(n // 2 - 1, c1, c2) + block(n // 4 - 1, c2, c4)
    total += block(n // 4 - 1, c4, c2) + block(n // 2 - 1, c2, c1) + block(n - 1, c1, c1)
    total += cfg.c_out * (c1 + cfg.c_in) + cfg.c_out
    return total


def config_dict(cfg: GshNetConfig) -> dict:
    return asdict(cfg)
