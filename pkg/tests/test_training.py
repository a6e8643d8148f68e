"""Losses, metrics, Adam and the training loop."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphgreen.errors import DegenerateError, DivergenceError, ShapeError
from sphgreen.gsno import layer_init
from sphgreen.harmonics import build_grid
from sphgreen.tasks import generate, random_bandlimited
from sphgreen.training import (
    AdamState,
    LossKind,
    TrainConfig,
    acc_metric,
    adam_step,
    lat_weighted_mse,
    lat_weighted_mse_grad,
    lat_weights,
    relative_weights,
    train,
    weighted_relative_loss,
    weighted_relative_loss_grad,
)
from sphgreen.transform import Field
from sphgreen.verify import finite_difference_errors

GRID = build_grid(12, 25)


def field(seed, channels=2, count=None):
    return random_bandlimited(11, channels, seed=seed, grid=GRID, count=count)


def test_relative_loss_trivial_values():
    t = field(0)
    assert weighted_relative_loss(t, t) == 0.0
    assert weighted_relative_loss(Field(GRID, np.zeros_like(t.values)), t) == 1.0
    assert abs(weighted_relative_loss(Field(GRID, 1.1 * t.values), t) - 0.1) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(-5.0, 5.0), seed=st.integers(0, 50))
def test_relative_loss_is_scale_reporting(alpha, seed):
    t = field(seed)
    got = weighted_relative_loss(Field(GRID, alpha * t.values), t)
    assert abs(got - abs(alpha - 1.0)) <= 1e-14 * max(1.0, abs(alpha - 1.0))


def test_relative_loss_averages_channels_and_samples():
    t = field(1, channels=2, count=3)
    p = t.values.copy()
    p[:, 0] *= 1.5
    assert abs(weighted_relative_loss(Field(GRID, p), t) - 0.25) < 1e-14


def test_relative_loss_uses_quadrature_weights():
    # a field living on one ring only: the loss ratio must be weight-free
    t = np.zeros((1,) + GRID.shape)
    t[0, 3] = 1.0
    p = t.copy()
    p[0, 5] = 1.0
    v = GRID.quad_weights
    expect = np.sqrt(v[5] / v[3])
    assert abs(weighted_relative_loss(Field(GRID, p), Field(GRID, t)) - expect) < 1e-14
    legacy = np.sqrt(v[5] * np.sin(GRID.colatitudes[5]) / (v[3] * np.sin(GRID.colatitudes[3])))
    assert abs(weighted_relative_loss(Field(GRID, p), Field(GRID, t), legacy=True) - legacy) < 1e-14


def test_relative_weights_legacy_double_counts_sine():
    np.testing.assert_allclose(relative_weights(GRID, legacy=True), GRID.quad_weights * np.sin(GRID.colatitudes))
    np.testing.assert_array_equal(relative_weights(GRID), GRID.quad_weights)


def test_relative_loss_zero_target_raises():
    t = field(2)
    z = t.values.copy()
    z[1] = 0.0
    with pytest.raises(DegenerateError):
        weighted_relative_loss(t, Field(GRID, z))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        weighted_relative_loss(field(3, channels=1), field(3, channels=2))


@pytest.mark.parametrize("kind", ["relative", "mse"])
def test_loss_gradients_match_finite_differences(kind):
    t = field(4, count=2)
    p = t.values + 0.3 * field(5, count=2).values
    loss = weighted_relative_loss if kind == "relative" else lat_weighted_mse
    grad = weighted_relative_loss_grad if kind == "relative" else lat_weighted_mse_grad
    g = grad(Field(GRID, p), t).values
    errs = finite_difference_errors(lambda: loss(Field(GRID, p), t), {"p": p}, {"p": g}, entries=60)
    assert errs["p"] <= 1e-6


def test_loss_gradient_zero_at_target():
    t = field(6)
    p = t.values.copy()
    assert not weighted_relative_loss_grad(Field(GRID, p), t).values.any()
    h = 1e-5
    for i in np.random.default_rng(0).choice(p.size, 20, replace=False):
        o = p.flat[i]
        p.flat[i] = o + h
        up = lat_weighted_mse(Field(GRID, p), t)
        p.flat[i] = o - h
        dn = lat_weighted_mse(Field(GRID, p), t)
        p.flat[i] = o
        assert abs(up - dn) / (2 * h) <= 1e-10


def test_lat_weights_mean_one():
    for g in (GRID, build_grid(16, 33), build_grid(24, 48, "equiangular")):
        assert abs(lat_weights(g).mean() - 1.0) <= 1e-13


def test_lat_mse_constant_offset():
    t = field(7)
    assert lat_weighted_mse(t, t) == 0.0
    assert abs(lat_weighted_mse(Field(GRID, t.values + 0.3), t) - 0.09) <= 1e-12


def test_acc_plus_minus_one():
    t, c = field(8), field(9)
    assert abs(acc_metric(t, t, c) - 1.0) < 1e-14
    mirrored = Field(GRID, 2 * c.values - t.values)
    assert abs(acc_metric(mirrored, t, c) + 1.0) < 1e-14


def test_acc_zero_for_weighted_orthogonal_anomalies():
    c = field(10, channels=1)
    a = field(11, channels=1).values - c.values
    b = field(12, channels=1).values - c.values
    w = lat_weights(GRID)[:, None]
    b_perp = b - (w * a * b).sum() / (w * a * a).sum() * a
    acc = acc_metric(Field(GRID, c.values + b_perp), Field(GRID, c.values + a), c)
    assert abs(acc) < 1e-14


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_acc_bounded(seed):
    rng = np.random.default_rng(seed)
    p, t, c = (Field(GRID, rng.standard_normal((1,) + GRID.shape)) for _ in range(3))
    assert -1.0 <= acc_metric(p, t, c) <= 1.0


def test_acc_degenerate():
    t = field(13)
    with pytest.raises(DegenerateError):
        acc_metric(t, t, t)


def test_adam_first_step_bounded_by_lr():
    rng = np.random.default_rng(1)
    params = {"a": rng.standard_normal(20), "z": rng.standard_normal(5) + 1j * rng.standard_normal(5)}
    before = {k: v.copy() for k, v in params.items()}
    grads = {"a": rng.standard_normal(20) * 1e3, "z": rng.standard_normal(5) - 2j * rng.standard_normal(5)}
    cfg = TrainConfig(lr=0.01)
    adam_step(params, grads, AdamState(), cfg)
    for k in params:
        delta = (params[k] - before[k]).view(np.float64) if np.iscomplexobj(params[k]) else params[k] - before[k]
        assert np.abs(delta).max() <= cfg.lr * (1 + 1e-6)


def test_adam_zero_grads_leave_params_and_count_steps():
    params = {"a": np.arange(4.0)}
    state = AdamState()
    adam_step(params, {"a": np.zeros(4)}, state, TrainConfig())
    np.testing.assert_array_equal(params["a"], np.arange(4.0))
    assert state.step == 1


def test_adam_lr_zero_is_identity():
    params = {"a": np.arange(3.0), "z": np.array([1 + 2j])}
    state = AdamState()
    for _ in range(5):
        adam_step(params, {"a": np.ones(3), "z": np.array([3 - 1j])}, state, TrainConfig(lr=0.0))
    np.testing.assert_array_equal(params["a"], np.arange(3.0))
    assert params["z"][0] == 1 + 2j


def test_adam_converges_on_quadratic_bowl():
    a = np.array([1.5, -2.0, 0.25, 3.0])
    params = {"x": np.zeros(4)}
    state = AdamState()
    cfg = TrainConfig(lr=1e-2)
    for _ in range(5000):
        adam_step(params, {"x": params["x"] - a}, state, cfg)
    assert np.linalg.norm(params["x"] - a) <= 1e-6


def test_adam_non_finite_gradient_aborts():
    with pytest.raises(DivergenceError) as info:
        adam_step({"a": np.zeros(2)}, {"a": np.array([np.nan, 0.0])}, AdamState(), TrainConfig())
    assert info.value.diagnostics["params"] == ["a"]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert TrainConfig(loss="mse").loss is LossKind.LAT_WEIGHTED_MSE


def tiny_problem(n=8):
    ds = generate("poisson", n, 5, seed=3)
    lay = layer_init(5, 1, 1, seed=0, use_correction=False, use_mlp=False)
    return ds, lay


def test_train_lr_zero_one_sample_keeps_parameters():
    ds, lay = tiny_problem(1)
    before = {k: v.copy() for k, v in lay.state().items()}
    train(lay, ds, TrainConfig(lr=0.0, epochs=1, batch_size=1))
    for k, v in lay.state().items():
        np.testing.assert_array_equal(v, before[k])


def test_train_same_seed_identical_report():
    reports = []
    for threads in (1, 3):
        ds, lay = tiny_problem()
        val = generate("poisson", 4, 5, seed=4)
        cfg = TrainConfig(epochs=3, batch_size=4, threads=threads, microbatch=1)
        reports.append(train(lay, ds, cfg, val=val))
    assert reports[0].to_csv() == reports[1].to_csv()
    assert reports[0].curve() == reports[1].curve()


def test_train_reduces_loss_and_reports():
    ds, lay = tiny_problem()
    rep = train(lay, ds, TrainConfig(epochs=20, batch_size=4, loss="mse"))
    assert rep.steps == 40
    assert rep.epochs[-1]["train_loss"] < rep.epochs[0]["train_loss"]
    assert rep.to_csv().splitlines()[0] == "epoch,train_loss,val_loss"


def test_train_max_steps_and_keep_best():
    ds, lay = tiny_problem()
    val = generate("poisson", 4, 5, seed=5)
    rep = train(lay, ds, TrainConfig(epochs=50, batch_size=4, keep_best=True), val=val, max_steps=7)
    assert rep.steps == 7
    best = min(e["val_loss"] for e in rep.epochs)
    assert rep.final_metrics["val_loss"] == best


@pytest.mark.filterwarnings("ignore:overflow")
def test_train_divergence_carries_last_good():
    ds, lay = tiny_problem()
    y = ds.targets.values.copy()
    y[0, 0, 0, 0] = 1e308
    ds.targets = Field(ds.targets.grid, y)
    with pytest.raises(DivergenceError) as info:
        train(lay, ds, TrainConfig(epochs=2, batch_size=8, loss="mse"))
    assert set(info.value.last_good) == set(lay.parameters())
