"""Virtual IoT, UAV and satellite observation streams derived from truth series."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._spatial import nearest_indices
from .config import SensingConfig
from .district import District
from .scenario import HazardTimeline

__all__ = ["StreamSet", "synthesize_streams", "sample_indices", "STREAMS"]

STREAMS = ("iot", "uav", "sat")


@dataclass(frozen=True, eq=False)
class StreamSet:
    """Observation matrices with NaN marking missing entries.

    ``iot`` is dense on the timeline grid. ``uav`` and ``sat`` hold one column
    per acquisition, located on the grid by ``uav_idx`` and ``sat_idx``.
    """

    iot: np.ndarray
    uav: np.ndarray
    uav_idx: np.ndarray
    sat: np.ndarray
    sat_idx: np.ndarray
    sigmas: dict = field(default_factory=lambda: {"iot": 0.4, "uav": 0.8, "sat": 1.2})

    def __post_init__(self):
        n, T = self.iot.shape
        for name in ("uav", "sat"):
            mat, idx = getattr(self, name), getattr(self, f"{name}_idx")
            if mat.shape != (n, len(idx)):
                raise ValueError(f"{name} matrix does not match its index array")
            if len(idx) and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= T):
                raise ValueError(f"{name}_idx must be strictly increasing within [0, T)")

    @property
    def n_nodes(self):
        return self.iot.shape[0]

    @property
    def T(self):
        return self.iot.shape[1]

    def dense(self, name):
        """Stream ``name`` scattered onto the full ``(N, T)`` grid."""
        if name == "iot":
            return self.iot
        out = np.full((self.n_nodes, self.T), np.nan)
        out[:, getattr(self, f"{name}_idx")] = getattr(self, name)
        return out

    def merged(self):
        """Single observation per node and step, preferring IoT, then UAV, then SAT.

        Returns ``(values, source)`` where ``source`` is -1 where nothing was
        observed and otherwise the index into :data:`STREAMS`.
        """
        values = np.full((self.n_nodes, self.T), np.nan)
        source = np.full((self.n_nodes, self.T), -1, dtype=int)
        for k in reversed(range(len(STREAMS))):
            d = self.dense(STREAMS[k])
            hit = ~np.isnan(d)
            values[hit] = d[hit]
            source[hit] = k
        return values, source


def sample_indices(T: int, dt_min: float, every_min: float) -> np.ndarray:
    """Grid indices of acquisitions every ``every_min`` minutes starting at t=0."""
    stride = every_min / dt_min
    if stride < 1 or abs(stride - round(stride)) > 1e-9:
        raise ValueError("acquisition interval must be a whole multiple of the time step")
    return np.arange(0, T, int(round(stride)))


def synthesize_streams(truth, district: District, timeline: HazardTimeline,
                       config: SensingConfig | None = None, seed=0) -> StreamSet:
    """Noisy IoT/UAV/SAT views of ``truth`` (an ``(N, T)`` zone-temperature matrix).

    IoT reads every step on sensor nodes and drops out while the power is off.
    UAV frames cover every node hourly. Satellite passes every six hours see a
    regional average over each node's nearest neighbours (self included).
    """
    config = config or SensingConfig()
    truth = np.asarray(truth, dtype=float)
    n, T = truth.shape
    if n != len(district) or T != len(timeline):
        raise ValueError(f"truth shape {truth.shape} does not match district ({len(district)}) x timeline ({len(timeline)})")

    rng_iot, rng_uav, rng_sat = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    dt_min = timeline.dt_h * 60.0

    live = district.has_sensor[:, None] & (timeline.outage[None, :] == 0)
    iot = truth + rng_iot.normal(0.0, config.sigma_iot, truth.shape)
    iot = np.where(live, iot, np.nan)

    uav_idx = sample_indices(T, dt_min, config.uav_every_min)
    uav = truth[:, uav_idx] + rng_uav.normal(0.0, config.sigma_uav, (n, len(uav_idx)))

    sat_idx = sample_indices(T, dt_min, config.sat_every_min)
    field_ = truth[:, sat_idx]
    if config.sat_smooth_k > 1:
        nbrs = nearest_indices(district.xy, min(config.sat_smooth_k, n))
        field_ = field_[nbrs].mean(axis=1)
    sat = field_ + rng_sat.normal(0.0, config.sigma_sat, field_.shape)

    return StreamSet(
        iot=iot, uav=uav, uav_idx=uav_idx, sat=sat, sat_idx=sat_idx,
        sigmas={"iot": config.sigma_iot, "uav": config.sigma_uav, "sat": config.sigma_sat},
    )
