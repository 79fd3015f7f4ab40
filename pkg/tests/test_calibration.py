import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hazardtwin import _kernels
from hazardtwin import calibration as cal
from hazardtwin.calibration import (CalibParams, error_metrics, huber, loss_and_grad, physics_residual,
                                    predict_node, sequence_loss, split_nodes, train, validate)
from hazardtwin.config import TrainConfig
from hazardtwin.district import BuildingType
from hazardtwin.sensing import synthesize_streams
from hazardtwin.thermal import rc2_rollout, simulate_district, solar_gain


@pytest.fixture(scope="module")
def streams(district, timeline):
    truth = simulate_district(district, timeline, seed=0)
    return synthesize_streams(truth, district, timeline, seed=0)


@pytest.fixture(scope="module")
def params():
    return CalibParams.initial(TrainConfig(), 0, mu=(30.0, 30.0), sd=(3.0, 3.0))


def test_huber_branches():
    assert huber(0.5, 1.0) == pytest.approx(0.125)
    assert huber(-3.0, 1.0) == pytest.approx(2.5)


def test_error_metric_example():
    rmse, mae = error_metrics([0.0, 0.0], [3.0, 4.0])
    assert rmse == pytest.approx(np.sqrt(12.5)) and rmse == pytest.approx(3.536, abs=1e-3)
    assert mae == 3.5
    assert error_metrics([1.0], [np.nan]) == (None, None)


@given(arrays(float, st.integers(1, 50), elements=st.floats(-50, 50)),
       arrays(float, 50, elements=st.floats(-50, 50)))
def test_rmse_not_below_mae(pred, obs):
    rmse, mae = error_metrics(pred, obs[: len(pred)])
    assert rmse >= mae - 1e-12


def _school_node(district):
    return next(n for n in district.nodes if n.btype == BuildingType.School)


def test_sequence_loss_residual_weighting(params, district, timeline):
    node = _school_node(district)
    pred = predict_node(params, node.btype, timeline)
    assert sequence_loss(params, node, (0, 36), pred, timeline).l_seq == pytest.approx(0.0, abs=1e-18)
    # step 30 is powered, step 10 is in the blackout
    assert timeline.outage[30] == 0 and timeline.outage[10] == 1
    for step, expected in ((30, 0.125), (10, 0.1875)):
        obs = np.full(len(timeline), np.nan)
        obs[step] = pred[step] + 0.5
        rep = sequence_loss(params, node, (0, 36), obs, timeline)
        assert rep.l_seq == pytest.approx(expected, rel=1e-9)
        assert rep.l_soft == 0.0


def test_sequence_loss_window_checked(params, district, timeline):
    with pytest.raises(ValueError):
        sequence_loss(params, _school_node(district), (400, 440), np.zeros(len(timeline)), timeline)


def _grid_trajectory(params, btype, timeline, L=36):
    p = params.physical(btype)
    q = solar_gain(timeline.t_h[:L], p.solar_peak)
    Tw, Tz = rc2_rollout(p, 30.0, 29.0, timeline.T_out[None, :L], timeline.smoke[:L], timeline.outage[:L], q,
                         timeline.dt_h, 200)
    return Tw[0, :L], Tz[0, :L]


def test_physics_residual_behaviour(params, timeline):
    btype = BuildingType.MultiFamily
    Tw, Tz = _grid_trajectory(params, btype, timeline)
    # stay clear of the outage switches at 4 h and 6 h where the centred stencil straddles a jump
    pts = [3, 8, 13, 18]
    clean = physics_residual(params, btype, pts, Tw, Tz, timeline)
    shifted = physics_residual(params, btype, pts, Tw, Tz + 1.0, timeline)
    assert clean < 1e-2
    assert shifted > clean
    assert physics_residual(params, btype, pts, Tw, Tz + 1.0, timeline, scale=2.0) == pytest.approx(shifted / 4)
    with pytest.raises(ValueError):
        physics_residual(params, btype, [], Tw, Tz, timeline)
    with pytest.raises(ValueError):
        physics_residual(params, btype, [0], Tw, Tz, timeline)


def test_gradient_matches_central_differences(params, district, timeline, streams):
    cfg = TrainConfig()
    rng = np.random.default_rng(2024)
    merged, _ = streams.merged()
    fit, _ = split_nodes(district, streams, cfg)
    worst = 0.0
    for trial in range(20):
        nodes = rng.choice(fit, 2)
        starts = rng.integers(0, len(timeline) - cfg.window_len, 2)
        types, rows = district.types[nodes], merged[nodes]
        pts = rng.integers(1, cfg.window_len - 1, (2, 4))
        theta = params.flat() + rng.normal(0.0, 0.1, params.flat().size)
        q = params.with_flat(theta)
        n_sub = cal._window_substeps(q, types, timeline.dt_h)
        _, g = loss_and_grad(q, types, starts, rows, timeline, cfg, pts, n_sub)
        fd = np.empty_like(g)
        eps = 1e-6
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += eps
            tm[i] -= eps
            fp = loss_and_grad(params.with_flat(tp), types, starts, rows, timeline, cfg, pts, n_sub)[0].total
            fm = loss_and_grad(params.with_flat(tm), types, starts, rows, timeline, cfg, pts, n_sub)[0].total
            fd[i] = (fp - fm) / (2 * eps)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    assert worst < 1e-3


@pytest.mark.skipif(not _kernels.AVAILABLE, reason="compiled kernel unavailable")
def test_compiled_kernel_matches_numpy(params, timeline):
    types = np.array([0, 3, 5])
    obs = np.full((3, len(timeline)), np.nan)
    batch = cal._make_batch(params, types, [0, 100, 300], 36, timeline, obs)
    x0, _ = cal._init_forward(params, batch.types, batch.t0_h)
    P = cal._param_views(params, types)
    a = cal._rollout_sens(P, x0, batch, 8)
    b = cal._rollout_sens_numpy(P, x0, batch, 8)
    for name in ("X", "X1", "X2", "S", "S1", "S2"):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=1e-12, atol=1e-12, equal_nan=True)


def test_zero_epochs_returns_initial(district, timeline, streams, params):
    out = train(district, timeline, streams, TrainConfig(epochs=0), seed=0, init=params)
    assert np.array_equal(out.flat(), params.flat())


def test_full_batch_loss_never_rises(district, timeline, streams):
    history = []
    train(district, timeline, streams, TrainConfig(epochs=25, windows=8, full_batch=True), seed=1, history=history)
    totals = np.array([r.total for r in history])
    assert np.all(np.diff(totals) <= 1e-12)


def test_training_is_deterministic(district, timeline, streams):
    cfg = TrainConfig(epochs=5, windows=4)
    a = train(district, timeline, streams, cfg, seed=3)
    b = train(district, timeline, streams, cfg, seed=3)
    assert np.array_equal(a.flat(), b.flat())


@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_mapped_parameters_positive(seed, spread):
    p = CalibParams.initial(TrainConfig(), 0)
    q = p.with_flat(p.flat() + np.random.default_rng(seed).normal(0, spread, p.flat().size))
    for t in BuildingType:
        assert np.all(q.physical(t).physical_vector() > 0)


def test_round_trip_through_dict(params):
    back = CalibParams.from_dict(params.to_dict())
    assert np.allclose(back.raw, params.raw, atol=1e-12)
    assert np.array_equal(back.W1, params.W1)


def test_validation_metrics_shape(params, district, timeline, streams):
    m = validate(params, district, timeline, streams)
    rows = m.as_rows()
    assert [r["source"] for r in rows] == ["iot", "uav", "sat", "pooled"]
    for name in ("iot", "uav", "pooled"):
        assert m.rmse[name] >= m.mae[name]


def test_split_is_disjoint(district, streams):
    fit, val = split_nodes(district, streams, TrainConfig())
    assert not set(fit) & set(val)
    assert set(fit) | set(val) <= set(district.sensor_ids)
