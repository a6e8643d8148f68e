"""Binary file formats: fields, dataset stacks and parameter checkpoints.

Every file is::

    b"SPHG"  u16 version  u8 kind  u32 nlat  u32 nlon  u32 channels  u32 lmax  u8 grid_kind
    payload
    u32 crc32 (of everything before it)

All integers and floats are little-endian; samples are float64 in
channel-major, row-major order (latitude rows of longitude samples).

Payloads by ``kind``:

1 (field)
    ``channels * nlat * nlon`` samples.
2 (checkpoint)
    ``u32 len`` + UTF-8 JSON model description, ``u32 count``, then per tensor
    ``u16 len`` + UTF-8 name, ``u8 dtype`` (0 float64, 1 complex128 as
    interleaved re/im), ``u8 ndim``, ``ndim x u32`` dims, data.  Tensors
    appear in the model's canonical ``state()`` order.
3 (dataset)
    ``u32 n``, ``u32 target_channels``, inputs ``[n, channels, nlat, nlon]``,
    targets ``[n, target_channels, nlat, nlon]``, ``u32 len`` + UTF-8 JSON meta.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .gshnet import GshNet, GshNetConfig, build_gshnet
from .gsno import GsnoLayer, layer_init
from .harmonics import GridKind, SphericalGrid
from .tasks import FieldDataset
from .transform import Field

__all__ = [
    "FormatError",
    "MAGIC",
    "VERSION",
    "KIND_FIELD",
    "KIND_CHECKPOINT",
    "KIND_DATASET",
    "save_field",
    "load_field",
    "save_dataset",
    "load_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "read_kind",
    "model_description",
    "model_from_description",
]

MAGIC = b"SPHG"
VERSION = 1
KIND_FIELD, KIND_CHECKPOINT, KIND_DATASET = 1, 2, 3
_HEADER = struct.Struct("<4sHBIIIIB")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


class FormatError(ValueError):
    """Malformed, truncated or corrupted file."""


def _header(kind: int, grid: SphericalGrid, channels: int, lmax: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, kind, grid.nlat, grid.nlon, channels, lmax, grid.kind.code)


def _finish(path, body: bytes) -> None:
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("file is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: np.dtype, shape: tuple) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()

    def text(self, fmt: str = "<I") -> str:
        (n,) = self.unpack(fmt)
        return self.take(n).decode("utf-8")


def _open(path, expect_kind: int | None = None):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"{path}: too short for a SPHG file")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{path}: CRC32 mismatch")
    r = _Reader(body)
    magic, version, kind, nlat, nlon, channels, lmax, gk = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"{path}: kind tag {kind}, expected {expect_kind}")
    try:
        grid = SphericalGrid(nlat, nlon, GridKind.from_code(gk))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: invalid grid in header ({exc})") from exc
    return r, kind, grid, channels, lmax


def _done(r: _Reader, path) -> None:
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")


def read_kind(path) -> int:
    return _open(path)[1]


def _f64(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def _json(obj) -> bytes:
    b = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(b)) + b


# -- fields ---------------------------------------------------------------


def save_field(path, f: Field) -> None:
    """Write a single ``[channels, nlat, nlon]`` field."""
    if f.values.ndim != 3:
        raise ConfigurationError("save_field writes one [channels, nlat, nlon] field; use save_dataset for stacks")
    _finish(path, _header(KIND_FIELD, f.grid, f.channels, f.grid.lmax) + _f64(f.values))


def load_field(path) -> Field:
    r, _, grid, channels, _ = _open(path, KIND_FIELD)
    values = r.array(np.dtype("<f8"), (channels,) + grid.shape)
    _done(r, path)
    return Field(grid, values.astype(np.float64))


# -- datasets -------------------------------------------------------------


def save_dataset(path, ds: FieldDataset) -> None:
    x, y = ds.inputs.values, ds.targets.values
    grid = ds.inputs.grid
    if ds.targets.grid != grid:
        raise ConfigurationError("inputs and targets must share a grid")
    lmax = int(ds.meta.get("lmax", grid.lmax))
    body = _header(KIND_DATASET, grid, x.shape[1], lmax)
    body += struct.pack("<II", x.shape[0], y.shape[1]) + _f64(x) + _f64(y) + _json(ds.meta)
    _finish(path, body)


def load_dataset(path) -> FieldDataset:
    r, _, grid, channels, _ = _open(path, KIND_DATASET)
    n, tc = r.unpack("<II")
    x = r.array(np.dtype("<f8"), (n, channels) + grid.shape)
    y = r.array(np.dtype("<f8"), (n, tc) + grid.shape)
    meta = json.loads(r.text())
    _done(r, path)
    return FieldDataset(Field(grid, x.astype(np.float64)), Field(grid, y.astype(np.float64)), meta)


# -- checkpoints ----------------------------------------------------------


def _grid_desc(g: SphericalGrid) -> list:
    return [g.nlat, g.nlon, g.kind.value]


def _grid_from(desc) -> SphericalGrid:
    return SphericalGrid(int(desc[0]), int(desc[1]), GridKind.parse(desc[2]))


def model_description(model) -> dict:
    """JSON-able description sufficient to rebuild ``model``'s structure."""
    if isinstance(model, GshNet):
        return {"type": "gshnet", "config": dict(model.cfg.__dict__)}
    if isinstance(model, GsnoLayer):
        return {
            "type": "gsno",
            "lmax": model.lmax,
            "c_in": model.c_in,
            "c_out": model.c_out,
            "hidden": int(model.W1.shape[0]),
            "use_correction": model.use_correction,
            "use_mlp": model.use_mlp,
            "grid_in": _grid_desc(model.grid_in),
            "grid_out": _grid_desc(model.grid_out),
            "name": model.name,
        }
    raise ConfigurationError(f"cannot describe model of type {type(model).__name__}")


def model_from_description(desc: dict):
    """Structure-only rebuild (parameters hold fresh-init values)."""
    kind = desc.get("type")
    if kind == "gshnet":
        return build_gshnet(GshNetConfig(**desc["config"]), seed=0)
    if kind == "gsno":
        return layer_init(
            desc["lmax"],
            desc["c_in"],
            desc["c_out"],
            mlp_ratio=desc["hidden"] / desc["c_out"],
            grid_in=_grid_from(desc["grid_in"]),
            grid_out=_grid_from(desc["grid_out"]),
            use_correction=desc["use_correction"],
            use_mlp=desc["use_mlp"],
            name=desc.get("name", "gsno"),
        )
    raise FormatError(f"unknown model type {kind!r}")


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    """Write every tensor of ``model.state()`` (active or not) in canonical order."""
    state = model.state()
    desc = {"model": model_description(model), "extra": extra or {}}
    grid = model.grid_in
    lmax = model.lmax if isinstance(model, GsnoLayer) else grid.lmax
    parts = [_header(KIND_CHECKPOINT, grid, model.c_in, lmax), _json(desc), struct.pack("<I", len(state))]
    for name, t in state.items():
        code = 1 if np.iscomplexobj(t) else 0
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype=_DTYPES[code]).tobytes())
    _finish(path, b"".join(parts))


def load_checkpoint(path):
    """Returns ``(model, extra)``."""
    r, _, _, _, _ = _open(path, KIND_CHECKPOINT)
    desc = json.loads(r.text())
    model = model_from_description(desc["model"])
    state = model.state()
    (count,) = r.unpack("<I")
    seen = []
    for _ in range(count):
        name = r.text("<H")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        data = r.array(_DTYPES[code], shape)
        if name not in state:
            raise FormatError(f"{path}: unexpected tensor {name!r}")
        if state[name].shape != data.shape or np.iscomplexobj(state[name]) != bool(code):
            raise FormatError(f"{path}: tensor {name!r} has shape {data.shape}, model wants {state[name].shape}")
        state[name][...] = data
        seen.append(name)
    _done(r, path)
    if seen != list(state):
        raise FormatError(f"{path}: tensor table does not match the canonical order")
    return model, desc.get("extra", {})
