"""Lumped 2R2C building thermal model and companion physics.

State is ``(T_w, T_z)``: wall and zone-air temperature in C. Capacitances are
kWh/C, resistances C/kW, heat flows kW and time hours. Besides the 2R2C core the
module carries the boundary-flux, particulate-balance and damage laws used
elsewhere in the toolkit.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import ThermalConfig
from .district import BuildingType, District
from .scenario import HazardTimeline

__all__ = [
    "Rc2Params",
    "Rc2State",
    "TruthMode",
    "Pm25Params",
    "DamageModel",
    "SurfaceFluxParams",
    "STEFAN_BOLTZMANN",
    "PHYS_NAMES",
    "default_params",
    "rc2_step",
    "rc2_rollout",
    "stable_substeps",
    "solar_gain",
    "hvac_power",
    "simulate_building",
    "simulate_district",
    "daily_blackout_peaks",
    "surface_flux",
    "pm25_rollout",
    "damage",
]

STEFAN_BOLTZMANN = 5.670374419e-8

# the seven quantities a calibration run is allowed to move
PHYS_NAMES = ("C_w", "C_z", "R_wo", "R_wz", "Q_int", "Q_max", "db")


@dataclass(frozen=True)
class Rc2Params:
    C_w: float
    C_z: float
    R_wo: float
    R_wz: float
    Q_int: float
    Q_max: float
    db: float = 0.5
    setpoint: float = 24.0
    solar_peak: float = 0.0

    def __post_init__(self):
        for name in ("C_w", "C_z", "R_wo", "R_wz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.Q_max < 0 or self.db < 0:
            raise ValueError("Q_max and db must be nonnegative")

    def physical_vector(self):
        return np.array([getattr(self, n) for n in PHYS_NAMES], dtype=float)

    def with_physical(self, values):
        return replace(self, **{n: float(v) for n, v in zip(PHYS_NAMES, values)})


@dataclass(frozen=True)
class Rc2State:
    T_w: float
    T_z: float


class TruthMode(str, enum.Enum):
    Model = "model"  # plain physics, no injected effects
    Rc2Truth = "rc2"
    CoupledTruth = "coupled"


# C_w, C_z, R_wo, R_wz, Q_int, solar_peak per building type. Q_max is sized
# from these so that powered periods hold the setpoint.
_TYPE_TABLE = {
    BuildingType.MultiFamily: (10.0, 2.0, 0.50, 0.12, 1.5, 1.5),
    BuildingType.SingleFamily: (6.0, 1.2, 0.70, 0.18, 0.6, 0.8),
    BuildingType.Commercial: (12.0, 2.5, 0.40, 0.10, 2.0, 2.0),
    BuildingType.School: (8.0, 2.0, 0.55, 0.12, 1.0, 1.2),
    BuildingType.Grocery: (14.0, 3.0, 0.35, 0.08, 3.0, 2.0),
    BuildingType.Clinic: (15.0, 3.0, 0.45, 0.10, 2.0, 1.5),
}


def default_params(btype: BuildingType, T_out_max: float = 40.0, setpoint: float = 24.0, db: float = 0.5) -> Rc2Params:
    C_w, C_z, R_wo, R_wz, Q_int, solar = _TYPE_TABLE[BuildingType(btype)]
    load = (T_out_max - setpoint) / (R_wo + R_wz) + Q_int + solar
    return Rc2Params(C_w, C_z, R_wo, R_wz, Q_int, 1.25 * load, db, setpoint, solar)


def solar_gain(t_h, solar_peak):
    """Half-sine gain between 06:00 and 18:00 local time."""
    hod = np.mod(np.asarray(t_h, dtype=float), 24.0)
    return solar_peak * np.maximum(0.0, np.sin(np.pi * (hod - 6.0) / 12.0))


def hvac_power(T_z, outage, Q_max, db, setpoint):
    """Proportional cooling that saturates at ``Q_max`` one deadband above setpoint.

    Returns a nonpositive heat flow; zero whenever the power is out.
    """
    inv_db = _inv_db(db)
    frac = np.clip((np.asarray(T_z) - setpoint) * inv_db, 0.0, 1.0)
    return -(1.0 - np.asarray(outage)) * Q_max * frac


def _inv_db(db):
    # a zero deadband degenerates to on/off control
    db = np.asarray(db, dtype=float)
    return np.where(db > 0, 1.0 / np.maximum(db, 1e-300), 1e12)


def _rhs_basic(Tw, Tz, p, T_out_eff, Q_total):
    dTw = ((T_out_eff - Tw) / p.R_wo + (Tz - Tw) / p.R_wz) / p.C_w
    dTz = ((Tw - Tz) / p.R_wz + Q_total) / p.C_z
    return dTw, dTz


def rc2_step(state: Rc2State, params: Rc2Params, T_out_eff: float, Q_total: float, dt: float) -> Rc2State:
    """One explicit midpoint (RK2) step with inputs held constant over ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1w, k1z = _rhs_basic(state.T_w, state.T_z, params, T_out_eff, Q_total)
    mw, mz = state.T_w + 0.5 * dt * k1w, state.T_z + 0.5 * dt * k1z
    k2w, k2z = _rhs_basic(mw, mz, params, T_out_eff, Q_total)
    return Rc2State(state.T_w + dt * k2w, state.T_z + dt * k2z)


def stable_substeps(C_w, C_z, R_wo, R_wz, Q_max, db, dt, smoke=0.0, courant=0.25):
    """Substeps per ``dt`` keeping ``dt_sub * rho <= courant``.

    ``rho`` is the Gershgorin bound on the Jacobian spectral radius, including
    the proportional thermostat gain. RK2 is stable up to 2; the default 0.25
    keeps the fast transient at power restoration accurate to ~1e-4 C.
    """
    g = (1.0 - np.asarray(smoke)) / np.asarray(R_wo)
    rho_w = (g + 2.0 / np.asarray(R_wz)) / np.asarray(C_w)
    gain = np.where(np.asarray(db) > 0, np.asarray(Q_max) * _inv_db(db), 0.0)
    rho_z = (2.0 / np.asarray(R_wz) + gain) / np.asarray(C_z)
    rho = float(np.max(np.maximum(rho_w, rho_z)))
    return max(1, int(math.ceil(dt * rho / courant)))


class ParamBatch:
    """Column view of several :class:`Rc2Params` as ``(B,)`` arrays."""

    def __init__(self, params):
        params = list(params)
        for name in PHYS_NAMES + ("setpoint", "solar_peak"):
            setattr(self, name, np.array([getattr(p, name) for p in params], dtype=float))

    def __len__(self):
        return len(self.C_w)

    def substeps(self, dt, courant=0.25):
        return stable_substeps(self.C_w, self.C_z, self.R_wo, self.R_wz, self.Q_max, self.db, dt, courant=courant)


def rc2_rollout(p, Tw0, Tz0, T_out, smoke, outage, q_ext, dt, n_sub=None):
    """Vectorized RK2 rollout over a batch of buildings.

    ``p`` is any object exposing the :data:`PHYS_NAMES` attributes plus
    ``setpoint`` as scalars or ``(B,)`` arrays. Forcing arrays are ``(B, L)``
    and held constant over each step; ``q_ext`` collects exogenous zone gains
    (solar and any injected drift). Returns ``(Tw, Tz)`` of shape ``(B, L+1)``.
    """
    T_out = np.atleast_2d(T_out)
    B, L = T_out.shape
    smoke, outage, q_ext = (np.broadcast_to(np.atleast_2d(a), (B, L)) for a in (smoke, outage, q_ext))
    if n_sub is None:
        n_sub = stable_substeps(p.C_w, p.C_z, p.R_wo, p.R_wz, p.Q_max, p.db, dt)
    h = dt / n_sub
    Tw = np.empty((B, L + 1))
    Tz = np.empty((B, L + 1))
    Tw[:, 0], Tz[:, 0] = Tw0, Tz0
    a_w, b_w = 1.0 / p.C_w, 1.0 / (p.R_wz * p.C_w)
    b_z = 1.0 / (p.R_wz * p.C_z)
    inv_cz = 1.0 / p.C_z
    inv_db, sp = _inv_db(p.db), p.setpoint
    for j in range(L):
        gw = (1.0 - smoke[:, j]) / p.R_wo * a_w
        to = T_out[:, j]
        qz = (q_ext[:, j] + p.Q_int) * inv_cz
        kh = (1.0 - outage[:, j]) * p.Q_max * inv_cz
        w, z = Tw[:, j], Tz[:, j]
        for _ in range(n_sub):
            k1w = gw * (to - w) + b_w * (z - w)
            k1z = b_z * (w - z) + qz - kh * np.clip((z - sp) * inv_db, 0.0, 1.0)
            mw, mz = w + 0.5 * h * k1w, z + 0.5 * h * k1z
            k2w = gw * (to - mw) + b_w * (mz - mw)
            k2z = b_z * (mw - mz) + qz - kh * np.clip((mz - sp) * inv_db, 0.0, 1.0)
            w, z = w + h * k2w, z + h * k2z
        Tw[:, j + 1], Tz[:, j + 1] = w, z
    return Tw, Tz


def jitter_params(params: Rc2Params, rng, scale: float) -> Rc2Params:
    if scale <= 0:
        return params
    factors = np.exp(rng.normal(0.0, scale, 5))
    return replace(
        params,
        C_w=params.C_w * factors[0], C_z=params.C_z * factors[1],
        R_wo=params.R_wo * factors[2], R_wz=params.R_wz * factors[3],
        Q_int=params.Q_int * factors[4],
    )


def _simulate_physics(params_list, timeline, drift, n_sub=0, spin_days=2):
    """Batched physics run; returns ``(B, T, 2)`` states on the timeline grid.

    Initial states come from repeating the first day of forcing, which is a
    periodic start for the diurnal scenarios used here.
    """
    batch = ParamBatch(params_list)
    B, T = len(batch), len(timeline)
    n_sub = n_sub or batch.substeps(timeline.dt_h)
    q_ext = solar_gain(timeline.t_h[None, :], batch.solar_peak[:, None])
    if drift is not None:
        r_eff = batch.R_wo[:, None] / np.maximum(1.0 - timeline.smoke[None, :], 1e-6) + batch.R_wz[:, None]
        q_ext = q_ext + drift[:, None] * timeline.outage[None, :] / r_eff
    forcing = [np.broadcast_to(a[None, :], (B, T)) for a in (timeline.T_out, timeline.smoke, timeline.outage)]

    m = min(T, int(round(24.0 / timeline.dt_h)))
    Tw0, Tz0 = batch.setpoint.copy(), batch.setpoint.copy()
    for _ in range(spin_days):
        w, z = rc2_rollout(batch, Tw0, Tz0, *(f[:, :m] for f in forcing), q_ext[:, :m], timeline.dt_h, n_sub)
        Tw0, Tz0 = w[:, -1], z[:, -1]
    Tw, Tz = rc2_rollout(batch, Tw0, Tz0, *forcing, q_ext, timeline.dt_h, n_sub)
    # the state after the final transition lies past the grid
    return np.stack([Tw[:, :-1], Tz[:, :-1]], axis=-1)


def _coupled_truth(timeline, rngs, config):
    """First-order relaxation toward a smoke-damped copy of the outdoor cycle."""
    tau = np.array([r.uniform(config.tau_min_h, config.tau_max_h) for r in rngs])
    offset = np.array([r.uniform(-config.offset_max, config.offset_max) for r in rngs])
    ref = float(np.mean(timeline.T_out))
    base = ref + (1.0 - timeline.smoke) * (timeline.T_out - ref) + config.drift * timeline.outage
    target = base[None, :] + offset[:, None]
    a = timeline.dt_h / tau
    Tz = np.empty_like(target)
    Tz[:, 0] = target[:, 0]
    for k in range(1, Tz.shape[1]):
        Tz[:, k] = Tz[:, k - 1] + a * (target[:, k - 1] - Tz[:, k - 1])
    return np.stack([np.full_like(Tz, np.nan), Tz], axis=-1)


def _simulate_many(params_list, timeline, mode, seeds, config):
    mode = TruthMode(mode)
    rngs = [np.random.default_rng(s) for s in seeds]
    if mode is TruthMode.CoupledTruth:
        return _coupled_truth(timeline, rngs, config)
    if mode is TruthMode.Rc2Truth:
        params_list = [jitter_params(p, r, config.jitter) for p, r in zip(params_list, rngs)]
        drift = np.full(len(params_list), float(config.drift)) if config.drift else None
    else:
        drift = None
    return _simulate_physics(params_list, timeline, drift, config.substeps)


def simulate_building(params: Rc2Params, timeline: HazardTimeline, mode=TruthMode.Model, seed=0,
                      config: ThermalConfig | None = None) -> np.ndarray:
    """Indoor trajectory on the timeline grid as an ``(T, 2)`` array of ``(T_w, T_z)``.

    ``Model`` runs the bare physics; ``Rc2Truth`` jitters the envelope
    parameters per building and adds a blackout heat gain worth
    ``config.drift`` C of steady-state rise; ``CoupledTruth`` replaces the
    physics with a first-order relaxation toward a smoke-damped copy of the
    outdoor cycle (no wall state, so column 0 is NaN).
    """
    config = config or ThermalConfig()
    if len(timeline) == 0:
        raise ValueError("timeline is empty")
    return _simulate_many([params], timeline, mode, [seed], config)[0]


def simulate_district(district: District, timeline: HazardTimeline, config: ThermalConfig | None = None,
                      seed=0, params_by_type=None, mode=None) -> np.ndarray:
    """Zone temperatures for every node as an ``(N, T)`` matrix.

    Each node gets its own child seed, so node ``i`` sees the same draws as
    ``simulate_building(..., seed=SeedSequence(seed).spawn(N)[i])``.
    """
    config = config or ThermalConfig()
    if len(timeline) == 0:
        raise ValueError("timeline is empty")
    params_by_type = params_by_type or {t: default_params(t) for t in BuildingType}
    seeds = np.random.SeedSequence(seed).spawn(len(district))
    params_list = [params_by_type[node.btype] for node in district.nodes]
    mode = config.truth_mode if mode is None else mode
    return _simulate_many(params_list, timeline, mode, seeds, config)[:, :, 1]


def daily_blackout_peaks(T_z, timeline: HazardTimeline) -> np.ndarray:
    """Maximum of ``T_z`` over the blackout steps of each calendar day (NaN if none)."""
    T_z = np.asarray(T_z, dtype=float)
    day = np.floor(timeline.t_h / 24.0 + 1e-9).astype(int)
    out = []
    for k in range(day.max() + 1):
        m = (day == k) & (timeline.outage == 1)
        out.append(float(T_z[m].max()) if m.any() else float("nan"))
    return np.array(out)


@dataclass(frozen=True)
class SurfaceFluxParams:
    h: float
    emissivity: float
    sigma: float = STEFAN_BOLTZMANN

    def __post_init__(self):
        if self.h < 0 or not 0.0 <= self.emissivity <= 1.0:
            raise ValueError("need h >= 0 and emissivity in [0, 1]")


def surface_flux(params: SurfaceFluxParams, T_s, T_inf, T_sur):
    """Convective plus radiative surface flux in W/m2; temperatures in kelvin."""
    T_s, T_inf, T_sur = (np.asarray(v, dtype=float) for v in (T_s, T_inf, T_sur))
    if np.any(T_s < 0) or np.any(T_inf < 0) or np.any(T_sur < 0):
        raise ValueError("absolute temperatures must be nonnegative")
    q = params.h * (T_s - T_inf) + params.emissivity * params.sigma * (T_s ** 4 - T_sur ** 4)
    return float(q) if q.ndim == 0 else q


@dataclass(frozen=True)
class Pm25Params:
    a: float
    P: float
    k_dep: float
    CADR: float
    V: float
    S_ind: float = 0.0

    def __post_init__(self):
        if min(self.a, self.P, self.k_dep, self.CADR, self.S_ind) < 0 or self.V <= 0:
            raise ValueError("PM2.5 parameters must be nonnegative with V > 0")
        if self.P > 1:
            raise ValueError("penetration factor must lie in [0, 1]")

    @property
    def loss_rate(self):
        return self.a + self.k_dep + self.CADR / self.V

    def steady_state(self, C_out):
        return (self.a * self.P * C_out + self.S_ind) / self.loss_rate


def pm25_rollout(params: Pm25Params, C_out, C0: float, dt: float) -> np.ndarray:
    """Indoor PM2.5 series (same length as ``C_out``), starting at ``C0``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if C0 < 0:
        raise ValueError("initial concentration must be nonnegative")
    C_out = np.asarray(C_out, dtype=float)
    lam = params.loss_rate
    src = params.a * params.P * C_out + params.S_ind
    C = np.empty_like(C_out)
    C[0] = C0
    for k in range(1, len(C_out)):
        c = C[k - 1]
        k1 = src[k - 1] - lam * c
        k2 = src[k - 1] - lam * (c + 0.5 * dt * k1)
        C[k] = max(c + dt * k2, 0.0)
    return C


@dataclass(frozen=True)
class DamageModel:
    beta: float
    eps0: float
    K0: float

    def __post_init__(self):
        if self.beta < 0 or self.K0 <= 0:
            raise ValueError("need beta >= 0 and K0 > 0")


def damage(model: DamageModel, eps_s):
    """Damage index and degraded stiffness for the given strain."""
    excess = np.maximum(0.0, np.asarray(eps_s, dtype=float) - model.eps0)
    D = -np.expm1(-model.beta * excess)
    K = (1.0 - D) * model.K0
    if np.ndim(D) == 0:
        return float(D), float(K)
    return D, K
