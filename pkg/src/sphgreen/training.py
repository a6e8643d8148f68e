"""Losses, metrics, Adam and the training loop.

Models are duck-typed: anything with ``forward(x, tape)``,
``backward(tape, grad) -> (grad_x, grads)``, ``parameters()``, ``grid_in`` and
``grid_out`` trains here (``GsnoLayer`` and ``GshNet`` both qualify).
"""

from __future__ import annotations

import copy
import csv
import enum
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DegenerateError, DivergenceError, ShapeError
from .gsno import GradientTape
from .harmonics import SphericalGrid
from .transform import Field

__all__ = [
    "LossKind",
    "TrainConfig",
    "AdamState",
    "TrainReport",
    "relative_weights",
    "lat_weights",
    "weighted_relative_loss",
    "weighted_relative_loss_grad",
    "lat_weighted_mse",
    "lat_weighted_mse_grad",
    "acc_metric",
    "adam_step",
    "train",
    "evaluate",
]

log = logging.getLogger(__name__)


class LossKind(str, enum.Enum):
    WEIGHTED_RELATIVE = "relative"
    LAT_WEIGHTED_MSE = "mse"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    loss: LossKind = LossKind.WEIGHTED_RELATIVE
    legacy_weights: bool = False
    threads: int = 1
    # fixed work unit; gradient sums are taken in this order whatever ``threads`` is
    microbatch: int = 8
    # restore the parameters of the epoch with the lowest validation loss
    keep_best: bool = False

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        self.betas = tuple(float(b) for b in self.betas)
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1 or self.microbatch < 1 or self.threads < 1:
            raise ValueError("batch_size, microbatch and threads must be >= 1")


# -- weights --------------------------------------------------------------


def relative_weights(grid: SphericalGrid, legacy: bool = False) -> np.ndarray:
    """Ring weights ``v_i`` of the relative loss.

    The quadrature weights already carry the ``sin(theta)`` Jacobian; the
    legacy variant multiplies it in a second time.
    """
    v = np.asarray(grid.quad_weights)
    if legacy:
        v = v * np.sin(grid.colatitudes)
    return v


def lat_weights(grid: SphericalGrid) -> np.ndarray:
    """``cos(latitude)`` normalized to unit mean over the rings."""
    c = np.cos(grid.latitudes)
    return c / c.mean()


def _as_batch(pred: Field, target: Field):
    if pred.grid != target.grid or pred.values.shape != target.values.shape:
        raise ShapeError(f"prediction {pred.values.shape} and target {target.values.shape} do not match")
    shape = pred.values.shape
    return pred.values.reshape((-1,) + shape[-3:]), target.values.reshape((-1,) + shape[-3:])


# -- weighted relative L2 ------------------------------------------------------


def _relative_parts(p, t, v):
    w = v[:, None]
    num = ((p - t) ** 2 * w).sum(axis=(-2, -1))
    den = (t**2 * w).sum(axis=(-2, -1))
    if np.any(den <= 0):
        raise DegenerateError("target channel with zero energy")
    return num, den


def relative_loss_array(p, t, grid, legacy=False, with_grad=False):
    """Sum over the batch of per-sample relative losses (and its gradient)."""
    v = relative_weights(grid, legacy)
    num, den = _relative_parts(p, t, v)
    ratio = np.sqrt(num / den)
    nc = p.shape[1]
    total = ratio.sum() / nc
    if not with_grad:
        return total
    scale = np.divide(1.0, nc * den * ratio, out=np.zeros_like(ratio), where=ratio > 0)
    return total, scale[:, :, None, None] * (p - t) * v[:, None]


def weighted_relative_loss(pred: Field, target: Field, legacy: bool = False) -> float:
    """Mean over channels of the quadrature-weighted relative L2 error
    (averaged over any batch dimensions)."""
    p, t = _as_batch(pred, target)
    return float(relative_loss_array(p, t, pred.grid, legacy) / p.shape[0])


def weighted_relative_loss_grad(pred: Field, target: Field, legacy: bool = False) -> Field:
    p, t = _as_batch(pred, target)
    _, g = relative_loss_array(p, t, pred.grid, legacy, with_grad=True)
    return Field(pred.grid, (g / p.shape[0]).reshape(pred.values.shape))


# -- latitude-weighted MSE ----------------------------------------------------


def mse_array(p, t, grid, with_grad=False):
    w = lat_weights(grid)[:, None]
    per_sample_points = np.prod(p.shape[1:])
    d = p - t
    total = (w * d * d).sum() / per_sample_points
    if not with_grad:
        return total
    return total, 2.0 * w * d / per_sample_points


def lat_weighted_mse(pred: Field, target: Field) -> float:
    p, t = _as_batch(pred, target)
    return float(mse_array(p, t, pred.grid) / p.shape[0])


def lat_weighted_mse_grad(pred: Field, target: Field) -> Field:
    p, t = _as_batch(pred, target)
    _, g = mse_array(p, t, pred.grid, with_grad=True)
    return Field(pred.grid, (g / p.shape[0]).reshape(pred.values.shape))


def acc_metric(pred: Field, target: Field, climatology: Field) -> float:
    """Latitude-weighted anomaly correlation, averaged over batch samples."""
    p, t = _as_batch(pred, target)
    clim = np.broadcast_to(climatology.values, pred.values.shape).reshape(p.shape)
    w = lat_weights(pred.grid)[:, None]
    pa, ta = p - clim, t - clim
    num = (w * pa * ta).sum(axis=(1, 2, 3))
    den = np.sqrt((w * pa * pa).sum(axis=(1, 2, 3)) * (w * ta * ta).sum(axis=(1, 2, 3)))
    if np.any(den == 0):
        raise DegenerateError("zero anomaly energy in ACC denominator")
    return float(np.mean(num / den))


def loss_array(kind: LossKind, p, t, grid, legacy=False, with_grad=False):
    if kind is LossKind.WEIGHTED_RELATIVE:
        return relative_loss_array(p, t, grid, legacy, with_grad)
    return mse_array(p, t, grid, with_grad)


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def _real(a: np.ndarray) -> np.ndarray:
    return a.view(np.float64) if np.iscomplexobj(a) else a


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig):
    """In-place bias-corrected Adam update; complex arrays are treated as
    pairs of real parameters."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise DivergenceError(f"non-finite gradients in {bad}", diagnostics={"params": bad, "step": state.step})
    b1, b2 = cfg.betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for k, p in params.items():
        g = _real(np.ascontiguousarray(grads[k]))
        pr = _real(p)
        if g.shape != pr.shape:
            raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter {pr.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(pr)
            state.v[k] = np.zeros_like(pr)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        pr -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


# -- loop ---------------------------------------------------------------------


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)
    steps: int = 0

    def curve(self) -> list[tuple]:
        """``(epoch, train_loss, val_loss)`` rows; no timing, so runs compare exactly."""
        return [(e["epoch"], e["train_loss"], e["val_loss"]) for e in self.epochs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in self.curve():
            w.writerow([epoch, repr(float(tr)), "" if va is None else repr(float(va))])
        return buf.getvalue()


def _snapshot(model) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.parameters().items()}


def _chunk_grads(model, x, y, cfg: TrainConfig):
    tape = GradientTape()
    pred = model.forward(x, tape)
    loss, gpred = loss_array(cfg.loss, pred, y, model.grid_out, cfg.legacy_weights, with_grad=True)
    _, grads = model.backward(tape, gpred)
    tape.clear()
    return loss, grads


def batch_gradients(model, x, y, cfg: TrainConfig, pool: ThreadPoolExecutor | None = None):
    """Mean loss and gradients over a batch, summed micro-batch by micro-batch
    in a fixed order."""
    n = x.shape[0]
    bounds = [(i, min(i + cfg.microbatch, n)) for i in range(0, n, cfg.microbatch)]
    jobs = [(x[a:b], y[a:b]) for a, b in bounds]
    if pool is None:
        results = [_chunk_grads(model, cx, cy, cfg) for cx, cy in jobs]
    else:
        results = list(pool.map(lambda job: _chunk_grads(model, job[0], job[1], cfg), jobs))
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in results[0][1].items()}
    for loss, g in results:
        total += loss
        for k in grads:
            grads[k] += g[k]
    return total / n, {k: v / n for k, v in grads.items()}


def evaluate(model, inputs: np.ndarray, targets: np.ndarray, kind: LossKind, legacy=False, microbatch=64) -> float:
    total = 0.0
    for i in range(0, inputs.shape[0], microbatch):
        pred = model.forward(inputs[i : i + microbatch])
        total += loss_array(kind, pred, targets[i : i + microbatch], model.grid_out, legacy)
    return float(total / inputs.shape[0])


def train(model, dataset, cfg: TrainConfig, val=None, max_steps: int | None = None) -> TrainReport:
    """Seeded mini-batch Adam training.

    ``dataset``/``val`` are ``FieldDataset`` objects or ``(inputs, targets)``
    array pairs.  Raises :class:`DivergenceError` (carrying the last finite
    parameters) if the loss stops being finite.
    """
    x_all, y_all = _arrays(dataset)
    if x_all.shape[0] == 0:
        raise ValueError("empty dataset")
    val_arrays = _arrays(val) if val is not None else None
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    params = model.parameters()
    report = TrainReport()
    last_good = _snapshot(model)
    best, best_loss = None, np.inf
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        with threadpool_limits(limits=1):
            for epoch in range(1, cfg.epochs + 1):
                t0 = time.perf_counter()
                order = rng.permutation(x_all.shape[0])
                epoch_loss, seen = 0.0, 0
                for start in range(0, len(order), cfg.batch_size):
                    if max_steps is not None and report.steps >= max_steps:
                        break
                    idx = order[start : start + cfg.batch_size]
                    loss, grads = batch_gradients(model, x_all[idx], y_all[idx], cfg, pool)
                    if not np.isfinite(loss):
                        raise DivergenceError(f"loss became {loss} at step {report.steps}", last_good=last_good)
                    try:
                        adam_step(params, grads, state, cfg)
                    except DivergenceError as exc:
                        raise DivergenceError(str(exc), last_good=last_good, diagnostics=exc.diagnostics) from exc
                    last_good = _snapshot(model)
                    report.steps += 1
                    epoch_loss += loss * len(idx)
                    seen += len(idx)
                if seen == 0:
                    break
                val_loss = None
                if val_arrays is not None:
                    val_loss = evaluate(model, *val_arrays, cfg.loss, cfg.legacy_weights)
                    if cfg.keep_best and val_loss < best_loss:
                        best, best_loss = _snapshot(model), val_loss
                        report.final_metrics["best_epoch"] = epoch
                report.epochs.append(
                    {
                        "epoch": epoch,
                        "train_loss": epoch_loss / seen,
                        "val_loss": val_loss,
                        "wall_time": time.perf_counter() - t0,
                    }
                )
                log.debug("epoch %d train %.6g val %s", epoch, epoch_loss / seen, val_loss)
            if best is not None:
                for k, v in params.items():
                    v[...] = best[k]
            if val_arrays is not None:
                report.final_metrics["val_loss"] = evaluate(model, *val_arrays, cfg.loss, cfg.legacy_weights)
            report.final_metrics["train_loss"] = evaluate(model, x_all, y_all, cfg.loss, cfg.legacy_weights)
    finally:
        if pool is not None:
            pool.shutdown()
    return report


def _arrays(ds):
    if hasattr(ds, "inputs"):
        return ds.inputs.values, ds.targets.values
    x, y = ds
    return np.asarray(x), np.asarray(y)


def clone_model(model):
    return copy.deepcopy(model)
