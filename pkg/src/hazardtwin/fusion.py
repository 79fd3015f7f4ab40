"""Adaptive weighting of the three observation streams and Kalman assimilation."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_streams
from .config import FusionConfig
from .scenario import HazardTimeline
from .sensing import STREAMS, StreamSet
from .thermal import ParamBatch, Rc2Params, rc2_rollout, solar_gain

__all__ = [
    "FusionState",
    "RlWeights",
    "KalmanModel",
    "stream_scores",
    "fuse_weights",
    "rl_weight_update",
    "kalman_assimilate",
    "rc2_state_space",
    "fused_observations",
    "assimilate_district",
    "FusionWeighter",
]


@dataclass(frozen=True, eq=False)
class FusionState:
    w_ema: np.ndarray
    history: np.ndarray  # (T, 3) smoothed weights, one row per step
    scores: np.ndarray  # (T, 3) raw stream scores
    raw: np.ndarray  # (T, 3) softmax weights before smoothing


def _window_stats(win, delta_ref):
    """Availability and smoothness of a ``(N, W)`` window; empty -> (0, 0.5)."""
    if win.size == 0:
        return 0.0, 0.5
    q = float(np.mean(~np.isnan(win)))
    if win.shape[1] < 2:
        return q, 0.5
    diffs = np.abs(np.diff(win, axis=1))
    valid = ~np.isnan(diffs)
    if not valid.any():
        return q, 0.5
    mad = float(diffs[valid].mean())
    return q, 1.0 / (1.0 + mad / delta_ref)


def _last_column(idx, t):
    return int(np.searchsorted(idx, t, side="right")) - 1


def stream_scores(streams: StreamSet, t: int, config: FusionConfig | None = None) -> np.ndarray:
    """Quality scores ``(s_iot, s_uav, s_sat)`` at step ``t``.

    Each score is ``0.8 * availability + 0.2 * consistency`` over the trailing
    window; the sparse streams are further gated by ``exp(-age / half_life)``
    where age counts steps since their latest acquisition.
    """
    config = config or FusionConfig()
    if not 0 <= t < streams.T:
        raise IndexError(f"step {t} outside [0, {streams.T})")
    W = config.window
    q, r = _window_stats(streams.iot[:, max(0, t - W + 1): t + 1], config.delta_ref)
    scores = [0.8 * q + 0.2 * r]
    for name, half_life in (("uav", config.tau_uav), ("sat", config.tau_sat)):
        idx = getattr(streams, f"{name}_idx")
        c = _last_column(idx, t)
        if c < 0:
            q, r, f = 0.0, 0.5, 0.0
        else:
            win = getattr(streams, name)[:, max(0, c - W + 1): c + 1]
            q, r = _window_stats(win, config.delta_ref)
            f = float(np.exp(-(t - idx[c]) / half_life))
        scores.append((0.8 * q + 0.2 * r) * f)
    return np.array(scores)


def _softmax(s, tau):
    z = np.exp((s - np.max(s)) / tau)
    return z / z.sum()


def fuse_weights(streams: StreamSet, config: FusionConfig | None = None, T: int | None = None) -> FusionState:
    """Temperature softmax of the stream scores followed by EMA smoothing."""
    config = config or FusionConfig()
    T = streams.T if T is None else T
    w_ema = np.full(3, 1.0 / 3.0)
    history = np.empty((T, 3))
    scores = np.empty((T, 3))
    raw = np.empty((T, 3))
    for t in range(T):
        s = stream_scores(streams, min(t, streams.T - 1), config)
        w = _softmax(s, config.tau)
        w_ema = config.beta * w_ema + (1.0 - config.beta) * w
        w_ema = w_ema / w_ema.sum()
        scores[t], raw[t], history[t] = s, w, w_ema
    return FusionState(w_ema=w_ema.copy(), history=history, scores=scores, raw=raw)


@dataclass(frozen=True, eq=False)
class RlWeights:
    w: np.ndarray
    alpha: float


def rl_weight_update(state: RlWeights, r, x) -> RlWeights:
    """Move each weight by the centred reward times the centred quality."""
    w = np.asarray(state.w, dtype=float)
    r = np.asarray(r, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (w.shape == r.shape == x.shape):
        raise ValueError("weights, rewards and qualities must share one length")
    return RlWeights(w + state.alpha * (r - r.mean()) * (x - x.mean()), state.alpha)


@dataclass(frozen=True, eq=False)
class KalmanModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q_proc: np.ndarray
    R_meas: np.ndarray
    x: np.ndarray
    P: np.ndarray


def _discretize(A, B, dt, substeps=1):
    n = A.shape[0]
    step = np.eye(n) + A * (dt / substeps)
    Ad = np.linalg.matrix_power(step, substeps)
    acc = sum(np.linalg.matrix_power(step, i) for i in range(substeps))
    return Ad, acc @ B * (dt / substeps)


def _update(x, P, C, R, y):
    S = C @ P @ C.T + R
    try:
        K = np.linalg.solve(S.T, (P @ C.T).T).T
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("innovation covariance is singular") from None
    x = x + K @ (y - C @ x)
    I_KC = np.eye(len(x)) - K @ C
    # Joseph form keeps P symmetric positive semidefinite
    P = I_KC @ P @ I_KC.T + K @ R @ K.T
    return x, 0.5 * (P + P.T)


def kalman_assimilate(model: KalmanModel, u, y, dt: float, substeps: int = 1) -> KalmanModel:
    """Predict with ``Ad = I + A dt`` (optionally sub-stepped) and update on ``y``.

    ``y`` of ``None`` or all-NaN skips the update, leaving the predicted state.
    """
    Ad, Bd = _discretize(np.asarray(model.A, float), np.asarray(model.B, float), dt, substeps)
    x = Ad @ model.x + Bd @ np.atleast_1d(np.asarray(u, float))
    P = Ad @ model.P @ Ad.T + model.Q_proc
    if y is not None:
        y = np.atleast_1d(np.asarray(y, float))
        if not np.all(np.isnan(y)):
            C = np.atleast_2d(model.C)
            if np.linalg.matrix_rank(C @ P @ C.T + model.R_meas) < len(y):
                raise np.linalg.LinAlgError("innovation covariance is singular")
            x, P = _update(x, P, C, np.atleast_2d(model.R_meas), y)
    return replace(model, x=x, P=P)


def rc2_state_space(params: Rc2Params, smoke: float = 0.0):
    """Linear ``(A, B, C)`` for state ``[T_w, T_z]``, input ``[T_out, Q_total]``, output ``T_z``."""
    g = (1.0 - smoke) / params.R_wo
    cw, cz, rwz = params.C_w, params.C_z, params.R_wz
    A = np.array([[-(g + 1.0 / rwz) / cw, 1.0 / (rwz * cw)],
                  [1.0 / (rwz * cz), -1.0 / (rwz * cz)]])
    B = np.array([[g / cw, 0.0], [0.0, 1.0 / cz]])
    C = np.array([[0.0, 1.0]])
    return A, B, C


def fused_observations(streams: StreamSet, weights: np.ndarray):
    """Per-node fused reading and its variance on the full grid.

    At each step only streams with an acquisition at that step contribute,
    with their fusion weights renormalized over the available subset.
    """
    dense = np.stack([streams.dense(s) for s in STREAMS])  # (3, N, T)
    sig2 = np.array([streams.sigmas[s] ** 2 for s in STREAMS])[:, None, None]
    avail = ~np.isnan(dense)
    w = np.where(avail, weights.T[:, None, :], 0.0)
    tot = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        wn = w / tot
        y = np.where(tot > 0, np.nansum(wn * np.nan_to_num(dense), axis=0), np.nan)
        var = np.where(tot > 0, np.sum(wn ** 2 * sig2, axis=0), np.nan)
    return y, var


def assimilate_district(params_list, timeline: HazardTimeline, streams: StreamSet, weights: np.ndarray,
                        config: FusionConfig | None = None, x0=None):
    """Filtered zone temperatures ``(N, T)`` and their variances.

    The mean is propagated with the full nonlinear RK2 step (thermostat and
    outage logic included); the covariance uses the linearized envelope.
    """
    config = config or FusionConfig()
    batch = ParamBatch(params_list)
    N, T = len(batch), len(timeline)
    y, var = fused_observations(streams, weights)
    n_sub = batch.substeps(timeline.dt_h)
    q_sol = solar_gain(timeline.t_h[None, :], batch.solar_peak[:, None])

    x = np.column_stack([batch.setpoint, batch.setpoint]) if x0 is None else np.array(x0, float)
    P = np.tile(np.diag([1.0, 1.0]), (N, 1, 1))
    Qp = np.diag([config.kalman_q_wall, config.kalman_q_zone]) * timeline.dt_h
    Ads = []
    for p in params_list:
        A, B, _ = rc2_state_space(p, float(timeline.smoke[0]))
        Ads.append(_discretize(A, B, timeline.dt_h, n_sub)[0])
    Ad = np.stack(Ads)

    mean = np.empty((N, T))
    pvar = np.empty((N, T))
    for t in range(T):
        if t > 0:
            Tw, Tz = rc2_rollout(
                batch, x[:, 0], x[:, 1], timeline.T_out[None, t - 1].repeat(N)[:, None],
                timeline.smoke[t - 1], timeline.outage[t - 1], q_sol[:, t - 1:t], timeline.dt_h, n_sub,
            )
            x = np.column_stack([Tw[:, 1], Tz[:, 1]])
            P = Ad @ P @ Ad.transpose(0, 2, 1) + Qp
        obs = ~np.isnan(y[:, t])
        if obs.any():
            S = P[obs, 1, 1] + var[obs, t]
            K = P[obs, :, 1] / S[:, None]
            x[obs] = x[obs] + K * (y[obs, t] - x[obs, 1])[:, None]
            P[obs] = P[obs] - K[:, :, None] * P[obs, 1, :][:, None, :]
            P[obs] = 0.5 * (P[obs] + P[obs].transpose(0, 2, 1))
        mean[:, t] = x[:, 1]
        pvar[:, t] = P[:, 1, 1]
    return mean, pvar


class FusionWeighter(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` learns the weight trajectory of a stream set.

    ``transform`` returns the ``(T, 3)`` smoothed weights for any stream set.
    """

    def __init__(self, window=6, beta=0.9, tau=0.25, tau_uav=12.0, tau_sat=48.0, delta_ref=1.0):
        self.window = window
        self.beta = beta
        self.tau = tau
        self.tau_uav = tau_uav
        self.tau_sat = tau_sat
        self.delta_ref = delta_ref

    def _config(self):
        return FusionConfig(self.window, self.beta, self.tau, self.tau_uav, self.tau_sat, self.delta_ref)

    def fit(self, X, y=None):
        X = check_streams(X)
        state = fuse_weights(X, self._config())
        self.weights_ = state.history
        self.scores_ = state.scores
        self.final_weights_ = state.w_ema
        self.n_steps_ = X.T
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        return fuse_weights(check_streams(X), self._config()).history
