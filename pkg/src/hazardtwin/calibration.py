"""Per-type calibration of the 2R2C parameters against multimodal observations.

Each building type owns a log-parameterized vector of the seven physical
quantities in :data:`~hazardtwin.thermal.PHYS_NAMES` plus an embedding that,
together with a time-of-day encoding, feeds a one-hidden-layer network
predicting the initial ``(T_w, T_z)`` of a rollout window. Gradients are exact
derivatives of the discrete RK2 map, propagated forward as state
sensitivities alongside the rollout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from ._validation import check_finite, check_streams
from .config import TrainConfig
from .district import BuildingType, District, NodeRecord
from .exceptions import NumericalError
from .scenario import HazardTimeline
from .sensing import STREAMS, StreamSet
from .thermal import PHYS_NAMES, Rc2Params, default_params, rc2_rollout, solar_gain, stable_substeps

__all__ = [
    "CalibParams",
    "LossReport",
    "ValidationMetrics",
    "huber",
    "error_metrics",
    "sequence_loss",
    "physics_residual",
    "loss_and_grad",
    "split_nodes",
    "train",
    "validate",
    "predict_node",
    "Rc2Calibrator",
]

N_TYPES = len(BuildingType)
N_PHYS = len(PHYS_NAMES)


@dataclass(eq=False)
class CalibParams:
    """Trainable state.

    The log physical values of type ``t`` are ``shared + delta[t]``: a common
    vector plus a per-type offset, so types that never appear in a training
    window still move with the district-wide correction.
    """

    shared: np.ndarray  # (7,)
    delta: np.ndarray  # (6, 7)
    emb: np.ndarray  # (6, E)
    W1: np.ndarray  # (H, E + 2)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (2, H)
    b2: np.ndarray  # (2,)
    mu: np.ndarray = field(default_factory=lambda: np.full(2, 30.0))
    sd: np.ndarray = field(default_factory=lambda: np.full(2, 3.0))
    setpoint: np.ndarray = field(default_factory=lambda: np.full(N_TYPES, 24.0))
    solar: np.ndarray = field(default_factory=lambda: np.zeros(N_TYPES))

    TRAINABLE = ("shared", "delta", "emb", "W1", "b1", "W2", "b2")

    @classmethod
    def initial(cls, config: TrainConfig | None = None, seed=0, mu=(30.0, 30.0), sd=(3.0, 3.0)):
        """Type defaults for the physics, small random weights for the network."""
        config = config or TrainConfig()
        rng = np.random.default_rng(seed)
        defaults = [default_params(t) for t in BuildingType]
        H, E = config.hidden, config.embed
        logs = np.log([p.physical_vector() for p in defaults])
        return cls(
            shared=logs.mean(axis=0),
            delta=logs - logs.mean(axis=0),
            emb=rng.normal(0.0, 0.1, (N_TYPES, E)),
            W1=rng.normal(0.0, 1.0 / math.sqrt(E + 2), (H, E + 2)),
            b1=np.zeros(H),
            W2=rng.normal(0.0, 0.1 / math.sqrt(H), (2, H)),
            b2=np.zeros(2),
            mu=np.asarray(mu, dtype=float),
            sd=np.asarray(sd, dtype=float),
            setpoint=np.array([p.setpoint for p in defaults]),
            solar=np.array([p.solar_peak for p in defaults]),
        )

    @property
    def raw(self) -> np.ndarray:
        """Per-type log physical values, ``(6, 7)``."""
        return self.shared[None, :] + self.delta

    def physical(self, btype) -> Rc2Params:
        t = int(btype)
        return Rc2Params(*np.exp(self.raw[t]), setpoint=float(self.setpoint[t]), solar_peak=float(self.solar[t]))

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in self.TRAINABLE])

    def with_flat(self, vec) -> "CalibParams":
        vec = np.asarray(vec, dtype=float)
        parts, i = {}, 0
        for n in self.TRAINABLE:
            shape = getattr(self, n).shape
            size = int(np.prod(shape))
            parts[n] = vec[i:i + size].reshape(shape).copy()
            i += size
        if i != vec.size:
            raise ValueError("flat vector length does not match the parameter layout")
        return CalibParams(**parts, mu=self.mu.copy(), sd=self.sd.copy(),
                           setpoint=self.setpoint.copy(), solar=self.solar.copy())

    def copy(self) -> "CalibParams":
        return self.with_flat(self.flat())

    def init_state(self, btype, t_h):
        x0, _ = _init_forward(self, np.atleast_1d(np.asarray(btype, int)), np.atleast_1d(np.asarray(t_h, float)))
        return x0

    def to_dict(self):
        return {
            "physical": {
                BuildingType(t).token: dict(zip(PHYS_NAMES, np.exp(self.raw[t]).tolist())) for t in range(N_TYPES)
            },
            "shared_log": self.shared.tolist(),
            "setpoint": self.setpoint.tolist(),
            "solar_peak": self.solar.tolist(),
            "network": {n: getattr(self, n).tolist() for n in ("emb", "W1", "b1", "W2", "b2", "mu", "sd")},
        }

    @classmethod
    def from_dict(cls, d):
        raw = np.log([[d["physical"][tok][n] for n in PHYS_NAMES] for tok in (t.token for t in BuildingType)])
        shared = np.asarray(d.get("shared_log", np.zeros(N_PHYS)), dtype=float)
        net = {n: np.asarray(v, dtype=float) for n, v in d["network"].items()}
        return cls(shared=shared, delta=raw - shared, setpoint=np.asarray(d["setpoint"], float), solar=np.asarray(d["solar_peak"], float), **net)


@dataclass(frozen=True)
class LossReport:
    l_seq: float
    l_phys: float
    l_soft: float
    total: float
    lambda_data: float = 1.0
    lambda_phys: float = 12.0


@dataclass(frozen=True)
class ValidationMetrics:
    """RMSE/MAE per source in C; ``None`` marks a source without enough points."""

    rmse: dict
    mae: dict
    count: dict

    def as_rows(self):
        rows = []
        for name in (*STREAMS, "pooled"):
            rows.append({"source": name, "rmse": self.rmse.get(name), "mae": self.mae.get(name),
                         "n": self.count.get(name, 0)})
        return rows


def huber(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def _huber_grad(r, delta):
    return np.clip(r, -delta, delta)


def error_metrics(pred, obs):
    """``(rmse, mae)`` over entries where both arrays are finite."""
    pred, obs = np.asarray(pred, float), np.asarray(obs, float)
    ok = np.isfinite(pred) & np.isfinite(obs)
    if not ok.any():
        return None, None
    e = pred[ok] - obs[ok]
    return float(np.sqrt(np.mean(e * e))), float(np.mean(np.abs(e)))


# --- initial-state network ---------------------------------------------------

def _init_forward(params, types, t0_h):
    a = np.column_stack([params.emb[types], np.sin(2 * np.pi * t0_h / 24.0), np.cos(2 * np.pi * t0_h / 24.0)])
    h = np.tanh(a @ params.W1.T + params.b1)
    o = h @ params.W2.T + params.b2
    return params.mu + params.sd * o, (a, h)


def _init_backward(params, types, cache, g_x0, grads):
    a, h = cache
    g_o = g_x0 * params.sd
    grads["W2"] += g_o.T @ h
    grads["b2"] += g_o.sum(axis=0)
    g_z = (g_o @ params.W2) * (1.0 - h * h)
    grads["W1"] += g_z.T @ a
    grads["b1"] += g_z.sum(axis=0)
    np.add.at(grads["emb"], types, (g_z @ params.W1)[:, : params.emb.shape[1]])


# --- rollout with forward sensitivities ------------------------------------

class _Batch:
    """Per-window forcing, observations and parameter views, all ``(K, ...)``."""

    def __init__(self, types, starts, L, timeline, obs, q_sol_by_type):
        self.types = np.asarray(types, int)
        self.starts = np.asarray(starts, int)
        self.L = L
        cols = self.starts[:, None] + np.arange(L)[None, :]
        self.T_out = timeline.T_out[cols]
        self.smoke = timeline.smoke[cols]
        self.outage = timeline.outage[cols].astype(float)
        self.q_sol = q_sol_by_type[self.types[:, None], cols]
        self.obs = obs
        self.t0_h = timeline.t_h[self.starts]
        self.dt = timeline.dt_h


class _Trace:
    """Grid states ``X`` plus, for each step, the states one (``X1``) and two
    (``X2``) substeps into the following interval."""

    def __init__(self, X, X2, X1, h, S=None, S2=None, S1=None):
        self.X, self.X2, self.X1, self.h = X, X2, X1, h
        self.S, self.S2, self.S1 = S, S2, S1


def _rollout_sens(P, x0, batch, n_sub, want_sens=True) -> _Trace:
    if not _kernels.AVAILABLE:
        return _rollout_sens_numpy(P, x0, batch, n_sub, want_sens)
    Pm = np.column_stack([np.broadcast_to(np.asarray(v, float), (len(x0),)) for v in P])
    X, X2, X1, S, S2, S1 = _kernels.rollout_sens(Pm, x0, batch.T_out, batch.smoke, batch.outage, batch.q_sol,
                                                 batch.dt, n_sub, want_sens)
    return _Trace(X, X2, X1, batch.dt / n_sub, S, S2, S1)


def _rollout_sens_numpy(P, x0, batch, n_sub, want_sens=True) -> _Trace:
    """RK2 rollout over each window with forward sensitivities.

    States are ``(K, L, 2)``, sensitivities ``(K, L, 2, 9)`` with columns the
    seven log-parameters then the two initial states. The sensitivity
    recursion is the exact derivative of the discrete midpoint map.
    """
    Cw, Cz, Rwo, Rwz, Qi, Qm, db, sp = P
    K, L = batch.T_out.shape
    h = batch.dt / n_sub
    nc = N_PHYS + 2
    X, X2, X1 = (np.full((K, L, 2), np.nan) for _ in range(3))
    w, z = x0[:, 0].copy(), x0[:, 1].copy()
    X[:, 0, 0], X[:, 0, 1] = w, z
    S = S2 = S1 = sw = sz = None
    if want_sens:
        S, S2, S1 = (np.full((K, L, 2, nc), np.nan) for _ in range(3))
        sw, sz = np.zeros((K, nc)), np.zeros((K, nc))
        sw[:, N_PHYS] = 1.0
        sz[:, N_PHYS + 1] = 1.0
        S[:, 0, 0], S[:, 0, 1] = sw, sz
        Fw, Fz = np.zeros((K, nc)), np.zeros((K, nc))
    kw = 1.0 / (Rwz * Cw)
    kz = 1.0 / (Rwz * Cz)
    inv_db = 1.0 / db
    Fz_qi = Qi / Cz

    def rates(w, z):
        e = (z - sp) * inv_db
        frac = np.clip(e, 0.0, 1.0)
        fw = gw * (to - w) + kw * (z - w)
        fz = kz * (w - z) + qz - on * frac
        return fw, fz, e, frac

    def sens_rate(w, z, fw, fz, e, frac, sw, sz):
        band = (e > 0.0) & (e < 1.0)
        j11 = (-kz - on * band * inv_db)[:, None]
        Fw[:, 0] = -fw
        Fw[:, 2] = -gw * (to - w)
        Fw[:, 3] = -kw * (z - w)
        Fz[:, 1] = -fz
        Fz[:, 3] = -kz * (w - z)
        Fz[:, 4] = Fz_qi
        Fz[:, 5] = -on * frac
        Fz[:, 6] = on * e * band
        return j00 * sw + kw_ * sz + Fw, kz_ * sw + j11 * sz + Fz

    kw_, kz_ = kw[:, None], kz[:, None]
    for j in range(L - 1):
        to, u = batch.T_out[:, j], batch.outage[:, j]
        gw = (1.0 - batch.smoke[:, j]) / (Rwo * Cw)
        qz = (batch.q_sol[:, j] + Qi) / Cz
        on = (1.0 - u) * Qm / Cz
        j00 = (-gw - kw)[:, None]
        for i in range(n_sub):
            fw, fz, e, frac = rates(w, z)
            mw, mz = w + 0.5 * h * fw, z + 0.5 * h * fz
            gw2, gz2, e2, frac2 = rates(mw, mz)
            if want_sens:
                d1w, d1z = sens_rate(w, z, fw, fz, e, frac, sw, sz)
                dmw, dmz = sw + 0.5 * h * d1w, sz + 0.5 * h * d1z
                d2w, d2z = sens_rate(mw, mz, gw2, gz2, e2, frac2, dmw, dmz)
                sw, sz = sw + h * d2w, sz + h * d2z
            w, z = w + h * gw2, z + h * gz2
            if i == 0:
                X1[:, j, 0], X1[:, j, 1] = w, z
                if want_sens:
                    S1[:, j, 0], S1[:, j, 1] = sw, sz
            elif i == 1:
                X2[:, j, 0], X2[:, j, 1] = w, z
                if want_sens:
                    S2[:, j, 0], S2[:, j, 1] = sw, sz
        X[:, j + 1, 0], X[:, j + 1, 1] = w, z
        if want_sens:
            S[:, j + 1, 0], S[:, j + 1, 1] = sw, sz
    return _Trace(X, X2, X1, h, S, S2, S1)


def _param_views(params, types):
    phys = np.exp(params.raw[types])  # (K, 7)
    return tuple(phys[:, i] for i in range(N_PHYS)) + (params.setpoint[types],)


def _balance(P, w, z, to, sm, u, qe):
    """Heat-flow balance terms ``g = C * f`` with state and log-parameter partials."""
    Cw, Cz, Rwo, Rwz, Qi, Qm, db, sp = P
    go = (1.0 - sm) / Rwo
    e = (z - sp) / db
    frac = np.clip(e, 0.0, 1.0)
    band = (e > 0.0) & (e < 1.0)
    qm = (1.0 - u) * Qm
    g_w = go * (to - w) + (z - w) / Rwz
    g_z = (w - z) / Rwz + qe + Qi - qm * frac
    dgw_dx = (-go - 1.0 / Rwz, 1.0 / Rwz)
    dgz_dx = (1.0 / Rwz, -1.0 / Rwz - qm * band / db)
    dgw_dp = (0.0, 0.0, -go * (to - w), -(z - w) / Rwz, 0.0, 0.0, 0.0)
    dgz_dp = (0.0, 0.0, 0.0, -(w - z) / Rwz, Qi, -qm * frac, qm * e * band)
    return g_w, g_z, dgw_dx, dgz_dx, dgw_dp, dgz_dp


def _physics_terms(P, batch, points, sides, left, center, right, h, scale, dleft=None, dcenter=None, dright=None):
    """Balance residuals at ``center`` states (``(K, M, 2)``) with optional gradients.

    The time derivative is the centred difference ``(right - left) / 2h``;
    the right-hand side averages the forcing of the step indices in ``sides``.
    ``d*`` are the matching sensitivities ``(K, M, 2, 9)``.
    """
    K, M = points.shape
    rows = np.arange(K)[:, None]
    D = (right - left) / (2 * h)  # (K, M, 2)
    x = center
    PP = tuple(np.broadcast_to(np.asarray(p)[:, None], (K, M)) if np.ndim(p) else p for p in P)
    Cw, Cz = PP[0], PP[1]
    wt = 1.0 / len(sides)
    acc = None
    for side in sides:
        f = (batch.T_out[rows, side], batch.smoke[rows, side], batch.outage[rows, side], batch.q_sol[rows, side])
        terms = _balance(PP, x[..., 0], x[..., 1], *f)
        if acc is None:
            acc = [wt * terms[0], wt * terms[1]] + [[wt * np.asarray(v) for v in t] for t in terms[2:]]
        else:
            acc[0] = acc[0] + wt * terms[0]
            acc[1] = acc[1] + wt * terms[1]
            for i in range(2, 6):
                acc[i] = [a + wt * np.asarray(v) for a, v in zip(acc[i], terms[i])]
    g_w, g_z, dgw_dx, dgz_dx, dgw_dp, dgz_dp = acc
    Rw = (Cw * D[..., 0] - g_w) / scale
    Rz = (Cz * D[..., 1] - g_z) / scale
    value = Rw * Rw + Rz * Rz  # (K, M)
    if dcenter is None:
        return value, None
    dD = (dright - dleft) / (2 * h)
    Sx = dcenter
    dRw = Cw[..., None] * dD[..., 0, :] - dgw_dx[0][..., None] * Sx[..., 0, :] - dgw_dx[1][..., None] * Sx[..., 1, :]
    dRz = Cz[..., None] * dD[..., 1, :] - dgz_dx[0][..., None] * Sx[..., 0, :] - dgz_dx[1][..., None] * Sx[..., 1, :]
    dRw[..., 0] += Cw * D[..., 0]
    dRz[..., 1] += Cz * D[..., 1]
    for c in range(N_PHYS):
        dRw[..., c] -= dgw_dp[c]
        dRz[..., c] -= dgz_dp[c]
    grad = 2.0 * (Rw[..., None] * dRw + Rz[..., None] * dRz) / scale  # (K, M, 9)
    return value, grad


def _trace_physics(P, trace, batch, points, scale):
    """Residuals one substep into each sampled interval, where forcing is constant."""
    rows = np.arange(points.shape[0])[:, None]
    grads = () if trace.S is None else (trace.S[rows, points], trace.S1[rows, points], trace.S2[rows, points])
    return _physics_terms(P, batch, points, [points], trace.X[rows, points], trace.X1[rows, points],
                          trace.X2[rows, points], trace.h, scale, *grads)


def _batch_loss(params, batch, config, points, n_sub, want_grad=True):
    """Mean over windows of ``l_seq + lambda * l_phys + l_soft``; optional gradient."""
    K, L = batch.T_out.shape
    x0, cache = _init_forward(params, batch.types, batch.t0_h)
    P = _param_views(params, batch.types)
    trace = _rollout_sens(P, x0, batch, n_sub, want_grad)
    z = trace.X[..., 1]

    obs_ok = ~np.isnan(batch.obs)
    n_obs = obs_ok.sum(axis=1)
    r = np.where(obs_ok, z - np.nan_to_num(batch.obs), 0.0)
    wgt = (1.0 + 0.5 * batch.outage) * obs_ok
    seq = (wgt * huber(r, config.huber_delta)).sum(axis=1) / np.maximum(n_obs, 1)
    g_seq = wgt * _huber_grad(r, config.huber_delta) / np.maximum(n_obs, 1)[:, None]

    if config.soft_bounds:
        bo = batch.outage > 0
        n_bo = bo.sum(axis=1)
        lo = np.maximum(0.0, config.soft_lo - z)
        hi = np.maximum(0.0, z - config.soft_hi)
        soft = (bo * (lo * lo + hi * hi)).sum(axis=1) / np.maximum(n_bo, 1)
        g_soft = bo * (-2.0 * lo + 2.0 * hi) / np.maximum(n_bo, 1)[:, None]
    else:
        soft = np.zeros(K)
        g_soft = np.zeros_like(z)

    if points is not None and points.size and config.lambda_phys:
        pv, pg = _trace_physics(P, trace, batch, points, config.phys_scale)
        phys = pv.mean(axis=1)
    else:
        phys, pg = np.zeros(K), None

    total = seq + config.lambda_phys * phys + soft
    report = LossReport(float(seq.mean()), float(phys.mean()), float(soft.mean()), float(total.mean()),
                        1.0, config.lambda_phys)
    if not want_grad:
        return report, None

    # d(mean total)/d(sensitivity columns) per window
    g_z = (g_seq + g_soft) / K
    g_cols = np.einsum("kl,klc->kc", g_z, trace.S[:, :, 1, :])
    if pg is not None:
        g_cols += config.lambda_phys * pg.sum(axis=1) / (points.shape[1] * K)

    grads = {n: np.zeros_like(getattr(params, n)) for n in CalibParams.TRAINABLE}
    np.add.at(grads["delta"], batch.types, g_cols[:, :N_PHYS])
    grads["shared"] += g_cols[:, :N_PHYS].sum(axis=0)
    _init_backward(params, batch.types, cache, g_cols[:, N_PHYS:], grads)
    return report, np.concatenate([grads[n].ravel() for n in CalibParams.TRAINABLE])


# --- public loss helpers -----------------------------------------------------

def _obs_matrix(streams):
    values, _ = streams.merged()
    return values


def _q_sol_by_type(params, timeline):
    return solar_gain(timeline.t_h[None, :], params.solar[:, None])


def _make_batch(params, node_types, starts, L, timeline, obs_rows):
    cols = np.asarray(starts)[:, None] + np.arange(L)[None, :]
    obs = obs_rows[np.arange(len(starts))[:, None], cols]
    return _Batch(node_types, starts, L, timeline, obs, _q_sol_by_type(params, timeline))


def _window_substeps(params, types, dt, courant=0.25):
    phys = np.exp(params.raw[np.unique(types)])
    C_w, C_z, R_wo, R_wz, _, Q_max, db = phys.T
    # two substeps at least, so every interval holds a centred-difference stencil
    return max(2, stable_substeps(C_w, C_z, R_wo, R_wz, Q_max, db, dt, courant=courant))


def sequence_loss(params: CalibParams, node: NodeRecord, window, obs, timeline: HazardTimeline,
                  config: TrainConfig | None = None) -> LossReport:
    """Sequence and soft-bound losses of one node over ``window = (start, stop)``.

    ``obs`` is the node's merged observation row on the full grid.
    """
    config = config or TrainConfig()
    start, stop = window
    if not 0 <= start < stop <= len(timeline):
        raise ValueError("window must lie inside the timeline")
    types = np.array([int(node.btype)])
    batch = _make_batch(params, types, [start], stop - start, timeline, np.asarray(obs, float)[None, :])
    n_sub = _window_substeps(params, types, timeline.dt_h, config.courant)
    report, _ = _batch_loss(params, batch, config, None, n_sub, want_grad=False)
    return report


def physics_residual(params: CalibParams, btype, points, T_w, T_z, timeline: HazardTimeline,
                     start: int = 0, scale: float = 1.0) -> float:
    """Mean squared balance residual of a trajectory at window indices ``points``.

    ``T_w``/``T_z`` are consecutive grid values beginning at step ``start``;
    derivatives are centred differences over the grid neighbours.
    """
    points = np.atleast_1d(np.asarray(points, int))
    if points.size == 0:
        raise ValueError("empty sample set")
    L = len(T_z)
    if points.min() < 1 or points.max() > L - 2:
        raise ValueError("sample points must be interior to the rollout span")
    types = np.array([int(btype)])
    batch = _Batch(types, [start], L, timeline, np.full((1, L), np.nan), _q_sol_by_type(params, timeline))
    X = np.stack([np.asarray(T_w, float), np.asarray(T_z, float)], axis=-1)[None]
    pts = points[None, :]
    value, _ = _physics_terms(_param_views(params, types), batch, pts, [pts - 1, pts],
                              X[:, points - 1], X[:, points], X[:, points + 1], timeline.dt_h, scale)
    return float(value.mean())


def loss_and_grad(params: CalibParams, node_types, starts, obs_rows, timeline, config, points=None, n_sub=None):
    """Batch loss report and flat gradient for windows ``(node_types[k], starts[k])``."""
    batch = _make_batch(params, node_types, starts, config.window_len, timeline, obs_rows)
    n_sub = n_sub or _window_substeps(params, node_types, timeline.dt_h, config.courant)
    return _batch_loss(params, batch, config, points, n_sub)


# --- training ---------------------------------------------------------------

def split_nodes(district: District, streams: StreamSet, config: TrainConfig, seed=0):
    """Seeded 80/20 split of sensor nodes; training keeps only well-observed ones."""
    sensors = district.sensor_ids
    if sensors.size == 0:
        raise ValueError("district has no sensor nodes")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    order = rng.permutation(sensors)
    n_val = int(round(config.val_fraction * len(order)))
    n_val = min(max(n_val, 1), len(order) - 1) if len(order) > 1 else 0
    val, fit = np.sort(order[:n_val]), np.sort(order[n_val:])
    avail = np.mean(~np.isnan(streams.iot[fit]), axis=1)
    fit = fit[avail >= config.well_observed]
    return fit, val


class _Adam:
    def __init__(self, size, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps

    def step(self, g, lr):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return -lr * mh / (np.sqrt(vh) + self.eps)


def _sample_windows(rng, nodes, obs_rows, T, L, K, stride=1):
    stride = max(int(stride), 1)
    idx, starts = [], []
    tries = 0
    while len(idx) < K:
        tries += 1
        if tries > 100 * K:
            raise ValueError("could not find observed windows on the training nodes")
        i = int(rng.integers(len(nodes)))
        s = stride * int(rng.integers(0, (T - L) // stride + 1))
        if np.any(~np.isnan(obs_rows[i, s:s + L])):
            idx.append(i)
            starts.append(s)
    return np.array(idx), np.array(starts)


def _sample_points(rng, K, L, M):
    return rng.integers(0, L - 1, size=(K, M))


def train(district: District, timeline: HazardTimeline, streams: StreamSet, config: TrainConfig | None = None,
          seed=0, history: list | None = None, init: CalibParams | None = None) -> CalibParams:
    """Fit per-type physics and the initial-state network by clipped Adam.

    Windows of ``config.window_len`` steps are drawn from well-observed
    training nodes. With ``config.full_batch`` one fixed sample is reused
    every epoch and steps that would raise the loss are shrunk until they
    do not, so the recorded loss never increases.
    """
    config = config or TrainConfig()
    streams = check_streams(streams)
    L = config.window_len
    if L < 3 or L > len(timeline):
        raise ValueError("window length must be in [3, T]")
    fit_nodes, _ = split_nodes(district, streams, config, seed)
    if fit_nodes.size == 0:
        raise ValueError("no well-observed training nodes")
    merged = _obs_matrix(streams)
    obs_rows = merged[fit_nodes]
    if np.all(np.isnan(obs_rows)):
        raise ValueError("training nodes carry no observations")
    node_types = district.types[fit_nodes]

    seq_init, seq_windows, seq_points = np.random.SeedSequence(seed).spawn(3)
    if init is None:
        mu = np.nanmean(obs_rows)
        sd = max(float(np.nanstd(obs_rows)), 1e-3)
        params = CalibParams.initial(config, seq_init, mu=(mu, mu), sd=(sd, sd))
    else:
        params = init.copy()
    if config.epochs == 0:
        return params

    rng_w = np.random.default_rng(seq_windows)
    rng_p = np.random.default_rng(seq_points)
    theta = params.flat()
    opt = _Adam(theta.size, config.lr)
    M = config.phys_points

    def sample():
        i, s = _sample_windows(rng_w, fit_nodes, obs_rows, len(timeline), L, config.windows,
                              config.start_stride)
        return node_types[i], s, obs_rows[i], _sample_points(rng_p, len(s), L, M) if M > 0 else None

    fixed = sample() if config.full_batch else None
    prev = None
    for epoch in range(config.epochs):
        lr = config.lr * config.decay ** (epoch // config.decay_every) if config.decay_every else config.lr
        types, starts, rows, points = fixed or sample()
        current = params.with_flat(theta)
        n_sub = _window_substeps(current, types, timeline.dt_h, config.courant)
        report, g = loss_and_grad(current, types, starts, rows, timeline, config, points, n_sub)
        if not np.isfinite(report.total) or not np.all(np.isfinite(g)):
            raise NumericalError(f"calibration diverged at epoch {epoch} (loss {report.total})")
        norm = float(np.linalg.norm(g))
        if config.clip_norm and norm > config.clip_norm:
            g = g * (config.clip_norm / norm)
        step = opt.step(g, lr)
        if config.full_batch:
            prev = report.total if prev is None else prev
            for _ in range(30):
                cand = params.with_flat(theta + step)
                n_c = _window_substeps(cand, types, timeline.dt_h, config.courant)
                new, _ = _batch_loss(cand, _make_batch(cand, types, starts, L, timeline, rows), config,
                                     points, n_c, want_grad=False)
                if np.isfinite(new.total) and new.total <= report.total:
                    break
                step = 0.5 * step
            else:
                step = np.zeros_like(step)
        theta = theta + step
        if history is not None:
            history.append(report)
    params = params.with_flat(theta)
    check_finite(params.flat(), "calibration parameters")
    return params


# --- validation ---------------------------------------------------------------

def predict_node(params: CalibParams, btype, timeline: HazardTimeline, courant: float = 0.25) -> np.ndarray:
    """Full-series zone temperature of one building type from the regressed start.

    Uses the same substep rule as training so the fitted and reported
    trajectories come from one integrator.
    """
    p = params.physical(btype)
    x0 = params.init_state(int(btype), timeline.t_h[0])[0]
    q = solar_gain(timeline.t_h, p.solar_peak)
    n_sub = _window_substeps(params, np.array([int(btype)]), timeline.dt_h, courant)
    _, Tz = rc2_rollout(p, x0[0], x0[1], timeline.T_out[None, :], timeline.smoke, timeline.outage, q,
                        timeline.dt_h, n_sub)
    return Tz[0, :-1]


def validate(params: CalibParams, district: District, timeline: HazardTimeline, streams: StreamSet,
             nodes=None, config: TrainConfig | None = None, seed=0) -> ValidationMetrics:
    """RMSE and MAE of full-series rollouts, per source and pooled.

    ``nodes`` defaults to the held-out split. Sources with fewer than
    ``config.min_sat_points`` points (applied to the satellite stream) are
    reported as ``None`` and left out of the pooled figure.
    """
    config = config or TrainConfig()
    if nodes is None:
        _, nodes = split_nodes(district, streams, config, seed)
    nodes = np.atleast_1d(np.asarray(nodes, int))
    preds = {int(t): predict_node(params, t, timeline, config.courant) for t in np.unique(district.types[nodes])}
    pred = np.stack([preds[int(district.types[i])] for i in nodes]) if nodes.size else np.empty((0, len(timeline)))

    rmse, mae, count = {}, {}, {}
    pooled_p, pooled_o = [], []
    for name in STREAMS:
        obs = streams.dense(name)[nodes]
        ok = ~np.isnan(obs)
        n = int(ok.sum())
        count[name] = n
        if n == 0 or (name == "sat" and n < config.min_sat_points):
            rmse[name] = mae[name] = None
            continue
        rmse[name], mae[name] = error_metrics(pred[ok], obs[ok])
        pooled_p.append(pred[ok])
        pooled_o.append(obs[ok])
    if pooled_p:
        rmse["pooled"], mae["pooled"] = error_metrics(np.concatenate(pooled_p), np.concatenate(pooled_o))
        count["pooled"] = int(sum(len(p) for p in pooled_p))
    else:
        rmse["pooled"] = mae["pooled"] = None
        count["pooled"] = 0
    return ValidationMetrics(rmse, mae, count)


class Rc2Calibrator(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`train` and :func:`predict_node`.

    ``fit(X, y)`` takes ``X = (district, timeline)`` and ``y`` a
    :class:`StreamSet`; ``predict(X)`` returns ``(N, T)`` zone temperatures.
    """

    def __init__(self, epochs=300, windows=32, window_len=36, lr=0.03, lambda_phys=12.0, soft_bounds=False,
                 full_batch=False, seed=0):
        self.epochs = epochs
        self.windows = windows
        self.window_len = window_len
        self.lr = lr
        self.lambda_phys = lambda_phys
        self.soft_bounds = soft_bounds
        self.full_batch = full_batch
        self.seed = seed

    def _config(self):
        return TrainConfig(epochs=self.epochs, windows=self.windows, window_len=self.window_len, lr=self.lr,
                           lambda_phys=self.lambda_phys, soft_bounds=self.soft_bounds, full_batch=self.full_batch)

    def fit(self, X, y):
        district, timeline = X
        self.history_ = []
        self.params_ = train(district, timeline, y, self._config(), self.seed, history=self.history_)
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        district, timeline = X
        preds = {int(t): predict_node(self.params_, t, timeline, self._config().courant)
                 for t in np.unique(district.types)}
        return np.stack([preds[int(t)] for t in district.types])

    def score(self, X, y):
        """Negative pooled RMSE on the held-out sensor nodes."""
        check_is_fitted(self, "params_")
        district, timeline = X
        return -validate(self.params_, district, timeline, y, config=self._config(), seed=self.seed).rmse["pooled"]
