"""``sphgreen`` command line.

Exit codes: 0 success, 1 failed verification or a runtime failure
(corrupt file, divergence), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _io
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, DivergenceError
from .gshnet import GshNetConfig, build_gshnet
from .gsno import layer_init
from .harmonics import build_grid
from .io import (
    KIND_DATASET,
    KIND_FIELD,
    FormatError,
    load_checkpoint,
    load_dataset,
    load_field,
    read_kind,
    save_checkpoint,
    save_dataset,
)
from .tasks import TASKS, FieldDataset, generate
from .training import TrainConfig, acc_metric, lat_weighted_mse, train, weighted_relative_loss
from .transform import Field, isht_array, sht_array

__all__ = ["main", "run_cli", "RunManifest", "DEFAULT_CONFIG", "parse_config", "format_config"]

CSV_HELP = """CSV schemas:
  train  curve.csv   epoch,train_loss,val_loss
  eval   --out       sample,weighted_relative,lat_weighted_mse,acc   (last row: sample=mean)
  export --out       lat,lon,channel,value   (degrees; one row per grid point and channel)
  bench  --out       op,nlat,nlon,lmax,channels,repeats,seconds_per_call
"""

# flat key=value defaults for `train`; sections are key prefixes
DEFAULT_CONFIG: dict[str, object] = {
    "model.type": "gsno",
    "model.lmax": 15,
    "model.channels_in": 1,
    "model.channels_out": 1,
    "model.embed": 8,
    "model.nlat": 16,
    "model.nlon": 32,
    "model.grid": "gauss",
    "model.mlp_ratio": 2.0,
    "model.use_correction": True,
    "model.use_mlp": False,
    "model.pos_enc": True,
    "model.seed": 0,
    "data.task": "poisson",
    "data.train_path": "",
    "data.val_path": "",
    "data.n_train": 256,
    "data.n_val": 64,
    "data.seed": 7,
    "data.spectrum_slope": 0.0,
    "data.terrain_kind": "random",
    "data.terrain_seed": 1234,
    "data.terrain_lmax": 4,
    "data.terrain_scale": 1.0,
    "train.lr": 1e-3,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.epochs": 125,
    "train.batch_size": 16,
    "train.seed": 0,
    "train.loss": "mse",
    "train.max_steps": 2000,
    "train.microbatch": 8,
    "train.keep_best": True,
    "train.legacy_weights": False,
}


class UsageError(Exception):
    pass


def _coerce(key: str, text: str):
    default = DEFAULT_CONFIG[key]
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text.strip()


def parse_config(text: str) -> dict:
    """Defaults overlaid with ``section.key = value`` lines; ``#`` starts a comment."""
    cfg = dict(DEFAULT_CONFIG)
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULT_CONFIG:
            raise ConfigurationError(f"config line {n}: unknown key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def format_config(cfg: dict) -> str:
    lines = []
    section = None
    for key, value in cfg.items():
        head = key.split(".", 1)[0]
        if head != section:
            if section is not None:
                lines.append("")
            lines.append(f"# {head}")
            section = head
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# -- manifests ------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = __version__

    def write(self, path) -> None:
        doc = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "tool_version": self.version,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "inputs": {str(p): sha256_file(p) for p in self.inputs},
            "outputs": {str(p): sha256_file(p) for p in self.outputs},
            "wall_time_s": self.wall_time,
            "created_utc": datetime.now(timezone.utc).isoformat(),
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest_path(artifact) -> Path:
    return Path(str(artifact) + ".manifest.json")


# -- subcommands ----------------------------------------------------------


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("SPHG_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"SPHG_THREADS={env!r} is not an integer") from None
    if n < 1:
        raise ConfigurationError("thread count must be >= 1")
    return n


def cmd_verify(args, out) -> int:
    from .verify import run_checks

    modules = set(args.module) if args.module else None
    results = run_checks(args.lmax, modules)
    width = max(len(r.name) for r in results)
    print(f"{'module':<15} {'check':<{width}}  {'measured':>10}  {'tol':>8}  result", file=out)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.module:<15} {r.name:<{width}}  {r.measured:10.3e}  {r.tolerance:8.1e}  {status}", file=out)
        if r.error:
            print(f"    {r.error}", file=out)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=out)
    return 0 if failed == 0 else 1


def cmd_gen(args, out) -> int:
    t0 = time.perf_counter()
    grid = None
    if args.nlat or args.nlon:
        if not (args.nlat and args.nlon):
            raise ConfigurationError("--nlat and --nlon must be given together")
        grid = build_grid(args.nlat, args.nlon, args.grid)
    ds = generate(
        args.task,
        args.n,
        args.lmax,
        seed=args.seed,
        channels=args.channels,
        spectrum_slope=args.slope,
        grid=grid,
        terrain_kind=args.terrain_kind,
        terrain_seed=args.terrain_seed,
    )
    path = Path(args.out or f"{args.task}_l{args.lmax}_n{args.n}_s{args.seed}.sphg")
    save_dataset(path, ds)
    RunManifest("gen", {k: v for k, v in vars(args).items() if k != "func"}, args.seed, outputs={path: None}, wall_time=time.perf_counter() - t0).write(_manifest_path(path))
    print(f"wrote {path} ({len(ds)} pairs on {ds.inputs.grid})", file=out)
    return 0


def _model_from_config(cfg: dict):
    grid = build_grid(cfg["model.nlat"], cfg["model.nlon"], cfg["model.grid"])
    if cfg["model.type"] == "gsno":
        return layer_init(
            cfg["model.lmax"],
            cfg["model.channels_in"],
            cfg["model.channels_out"],
            mlp_ratio=cfg["model.mlp_ratio"],
            seed=cfg["model.seed"],
            grid_in=grid,
            use_correction=cfg["model.use_correction"],
            use_mlp=cfg["model.use_mlp"],
        )
    if cfg["model.type"] == "gshnet":
        net_cfg = GshNetConfig(
            c_in=cfg["model.channels_in"],
            c_out=cfg["model.channels_out"],
            embed=cfg["model.embed"],
            nlat=cfg["model.nlat"],
            nlon=cfg["model.nlon"],
            grid_kind=cfg["model.grid"],
            mlp_ratio=cfg["model.mlp_ratio"],
            pos_enc=cfg["model.pos_enc"],
            use_correction=cfg["model.use_correction"],
            use_mlp=cfg["model.use_mlp"],
        )
        return build_gshnet(net_cfg, cfg["model.seed"])
    raise ConfigurationError(f"model.type must be gsno or gshnet, got {cfg['model.type']!r}")


def _data_from_config(cfg: dict, grid) -> tuple[FieldDataset, FieldDataset | None, list[Path]]:
    inputs = []
    if cfg["data.train_path"]:
        train_ds = load_dataset(cfg["data.train_path"])
        inputs.append(Path(cfg["data.train_path"]))
        val_ds = None
        if cfg["data.val_path"]:
            val_ds = load_dataset(cfg["data.val_path"])
            inputs.append(Path(cfg["data.val_path"]))
        return train_ds, val_ds, inputs
    n_train, n_val = cfg["data.n_train"], cfg["data.n_val"]
    ds = generate(
        cfg["data.task"],
        n_train + n_val,
        min(cfg["model.lmax"], grid.lmax),
        seed=cfg["data.seed"],
        channels=cfg["model.channels_in"],
        spectrum_slope=cfg["data.spectrum_slope"],
        grid=grid,
        terrain_kind=cfg["data.terrain_kind"],
        terrain_seed=cfg["data.terrain_seed"],
        terrain_lmax=cfg["data.terrain_lmax"],
        terrain_scale=cfg["data.terrain_scale"],
    )
    train_ds, val_ds = ds.split(n_train)
    return train_ds, (val_ds if n_val else None), inputs


def cmd_train(args, out) -> int:
    t0 = time.perf_counter()
    cfg = parse_config(Path(args.config).read_text())
    if args.legacy_weights:
        cfg["train.legacy_weights"] = True
    model = _model_from_config(cfg)
    train_ds, val_ds, inputs = _data_from_config(cfg, model.grid_in)
    tcfg = TrainConfig(
        lr=cfg["train.lr"],
        betas=(cfg["train.beta1"], cfg["train.beta2"]),
        eps=cfg["train.eps"],
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        seed=cfg["train.seed"],
        loss=cfg["train.loss"],
        legacy_weights=cfg["train.legacy_weights"],
        threads=_threads(args),
        microbatch=cfg["train.microbatch"],
        keep_best=cfg["train.keep_best"] and val_ds is not None,
    )
    max_steps = cfg["train.max_steps"] or None
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        report = train(model, train_ds, tcfg, val=val_ds, max_steps=max_steps)
    except DivergenceError as exc:
        for k, v in model.parameters().items():
            v[...] = exc.last_good[k]
        save_checkpoint(outdir / "last_good.sphg", model, {"config": cfg, "diverged": str(exc)})
        print(f"training diverged: {exc}; last good parameters in {outdir / 'last_good.sphg'}", file=out)
        return 1
    ckpt, curve = outdir / "checkpoint.sphg", outdir / "curve.csv"
    save_checkpoint(ckpt, model, {"config": cfg, "steps": report.steps})
    curve.write_text(report.to_csv())
    summary = outdir / "report.txt"
    lines = [f"steps = {report.steps}", f"epochs = {len(report.epochs)}"]
    lines += [f"{k} = {v!r}" for k, v in sorted(report.final_metrics.items())]
    summary.write_text("\n".join(lines) + "\n")
    RunManifest(
        "train",
        {**cfg, "threads": tcfg.threads},
        cfg["train.seed"],
        inputs={p: None for p in [Path(args.config), *inputs]},
        outputs={ckpt: None, curve: None, summary: None},
        wall_time=time.perf_counter() - t0,
    ).write(outdir / "manifest.json")
    print("\n".join(lines), file=out)
    print(f"wrote {ckpt}, {curve}", file=out)
    return 0


def _climatology(targets: np.ndarray) -> np.ndarray:
    return targets.mean(axis=0)


def cmd_eval(args, out) -> int:
    t0 = time.perf_counter()
    model, extra = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    legacy = args.legacy_weights
    if ds.inputs.grid != model.grid_in:
        raise ConfigurationError(f"dataset grid {ds.inputs.grid} differs from model grid {model.grid_in}")
    grid = model.grid_out
    pred = np.concatenate([model.forward(ds.inputs.values[i : i + 64]) for i in range(0, len(ds), 64)])
    clim = Field(grid, _climatology(ds.targets.values))
    rows = []
    for i in range(len(ds)):
        p, t = Field(grid, pred[i]), Field(grid, ds.targets.values[i])
        try:
            acc = acc_metric(p, t, clim)
        except ValueError:
            acc = float("nan")
        rows.append((i, weighted_relative_loss(p, t, legacy), lat_weighted_mse(p, t), acc))
    mean = tuple(float(np.mean([r[j] for r in rows])) for j in (1, 2, 3))
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "weighted_relative", "lat_weighted_mse", "acc"])
    for r in rows:
        w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    w.writerow(["mean"] + [repr(v) for v in mean])
    dst = Path(args.out or Path(args.dataset).with_suffix(".eval.csv"))
    dst.write_text(buf.getvalue())
    RunManifest(
        "eval",
        {"checkpoint": args.checkpoint, "dataset": args.dataset, "legacy_weights": legacy},
        None,
        inputs={Path(args.checkpoint): None, Path(args.dataset): None},
        outputs={dst: None},
        wall_time=time.perf_counter() - t0,
    ).write(_manifest_path(dst))
    print(f"{'metric':<28} value", file=out)
    print(f"{'weighted relative error':<28} {mean[0]:.6e}", file=out)
    print(f"{'lat-weighted MSE':<28} {mean[1]:.6e}", file=out)
    print(f"{'ACC':<28} {mean[2]:.6f}", file=out)
    print(f"wrote {dst}", file=out)
    return 0


def cmd_export(args, out) -> int:
    t0 = time.perf_counter()
    kind = read_kind(args.path)
    if kind == KIND_FIELD:
        f = load_field(args.path)
        values, grid = f.values, f.grid
    elif kind == KIND_DATASET:
        ds = load_dataset(args.path)
        if not 0 <= args.index < len(ds):
            raise ConfigurationError(f"--index {args.index} outside [0, {len(ds)})")
        src = ds.inputs if args.which == "inputs" else ds.targets
        values, grid = src.values[args.index], src.grid
    else:
        raise ConfigurationError(f"{args.path} holds kind {kind}, not a field or dataset")
    lat = np.degrees(grid.latitudes)
    lon = np.degrees(grid.longitudes)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lat", "lon", "channel", "value"])
    for c in range(values.shape[0]):
        for i in range(grid.nlat):
            for j in range(grid.nlon):
                w.writerow([repr(float(lat[i])), repr(float(lon[j])), c, repr(float(values[c, i, j]))])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
        RunManifest(
            "export",
            {"path": args.path, "which": args.which, "index": args.index},
            None,
            inputs={Path(args.path): None},
            outputs={Path(args.out): None},
            wall_time=time.perf_counter() - t0,
        ).write(_manifest_path(args.out))
    else:
        out.write(buf.getvalue())
    return 0


def cmd_bench(args, out) -> int:
    t0 = time.perf_counter()
    rows = []

    def timeit(fn, repeats):
        fn()
        start = time.perf_counter()
        for _ in range(repeats):
            fn()
        return (time.perf_counter() - start) / repeats

    rng = np.random.default_rng(0)
    for lmax in args.lmax:
        grid = build_grid(lmax + 1, 2 * lmax + 2, args.grid)
        x = rng.standard_normal((args.channels,) + grid.shape)
        c = sht_array(x, grid, lmax)
        layer = layer_init(lmax, args.channels, args.channels, seed=0, grid_in=grid)
        xb = x[None]
        for op, fn in (
            ("sht", lambda: sht_array(x, grid, lmax)),
            ("isht", lambda: isht_array(c, grid)),
            ("gsno_forward", lambda: layer.forward(xb)),
        ):
            rows.append((op, grid.nlat, grid.nlon, lmax, args.channels, args.repeats, timeit(fn, args.repeats)))
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["op", "nlat", "nlon", "lmax", "channels", "repeats", "seconds_per_call"])
    w.writerows(rows)
    dst = Path(args.out)
    dst.write_text(buf.getvalue())
    RunManifest("bench", {k: v for k, v in vars(args).items() if k != "func"}, None, outputs={dst: None}, wall_time=time.perf_counter() - t0).write(_manifest_path(dst))
    for r in rows:
        print(f"{r[0]:<13} lmax={r[3]:<4} {r[6] * 1e3:10.3f} ms", file=out)
    print(f"wrote {dst}", file=out)
    return 0


# -- parser ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")

    def exit(self, status=0, message=None):
        if message:
            sys.stderr.write(message)
        raise SystemExit(status)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="sphgreen",
        description="Spherical harmonic transforms, GSNO layers and GSHNet training on synthetic operator tasks.",
        epilog=CSV_HELP + "\nEnvironment: SPHG_THREADS sets the default for --threads.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"sphgreen {__version__}")
    p.add_argument("--print-config", action="store_true", help="print every training config default and exit")
    p.add_argument("--threads", type=int, default=None, help="worker threads (results do not depend on it)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("--lmax", type=int, default=15)
    v.add_argument("--module", action="append", help="restrict to a module (repeatable)")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen", help="generate a dataset file")
    g.add_argument("task", choices=TASKS)
    g.add_argument("--lmax", type=int, default=15)
    g.add_argument("--n", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--channels", type=int, default=1)
    g.add_argument("--slope", type=float, default=0.0, help="spectral slope of the random inputs")
    g.add_argument("--nlat", type=int, default=0, help="grid rows (default lmax+1)")
    g.add_argument("--nlon", type=int, default=0, help="grid columns (default 2*lmax+2)")
    g.add_argument("--grid", choices=("gauss", "equiangular"), default="gauss")
    g.add_argument("--terrain-kind", choices=("random", "two-cap"), default="random")
    g.add_argument("--terrain-seed", type=int, default=1234)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train from a key=value config file")
    t.add_argument("config")
    t.add_argument("--out", default="run")
    t.add_argument("--legacy-weights", action="store_true", help="double sin(theta) weighting in the relative loss")
    t.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--out", default=None)
    e.add_argument("--legacy-weights", action="store_true")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="field or dataset entry to CSV")
    x.add_argument("path")
    x.add_argument("--which", choices=("inputs", "targets"), default="inputs")
    x.add_argument("--index", type=int, default=0)
    x.add_argument("--out", default=None)
    x.set_defaults(func=cmd_export)

    b = sub.add_parser("bench", help="time SHT, ISHT and layer forward")
    b.add_argument("--lmax", type=int, nargs="+", default=[15, 31, 63])
    b.add_argument("--channels", type=int, default=4)
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--grid", choices=("gauss", "equiangular"), default="gauss")
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(func=cmd_bench)
    return p


def run_cli(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.print_config:
            out.write(format_config(DEFAULT_CONFIG))
            return 0
        if args.command is None:
            raise UsageError(parser.format_usage())
        return args.func(args, out)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigurationError, FileNotFoundError, IsADirectoryError) as exc:
        sys.stderr.write(f"sphgreen: {exc}\n")
        return 2
    except (FormatError, ValueError, RuntimeError) as exc:
        sys.stderr.write(f"sphgreen: {type(exc).__name__}: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
