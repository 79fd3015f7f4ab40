"""Synthetic building district: typed nodes with physical, social and sensing attributes."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import DistrictConfig

__all__ = [
    "BuildingType",
    "NodeRecord",
    "District",
    "generate_district",
    "assign_sensors",
    "TYPE_TOKENS",
]


class BuildingType(enum.IntEnum):
    MultiFamily = 0
    SingleFamily = 1
    Commercial = 2
    School = 3
    Grocery = 4
    Clinic = 5

    @property
    def token(self) -> str:
        return TYPE_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "BuildingType":
        try:
            return cls(TYPE_TOKENS.index(token.strip().upper()))
        except ValueError:
            raise ValueError(f"unknown building type token {token!r}") from None


TYPE_TOKENS = ("MF", "SF", "COM", "SCH", "GRO", "CLI")

POP_RANGE = {
    BuildingType.MultiFamily: (20, 60),
    BuildingType.SingleFamily: (2, 5),
    BuildingType.Commercial: (1, 15),
    BuildingType.School: (100, 500),
    BuildingType.Grocery: (20, 80),
    BuildingType.Clinic: (10, 60),
}

VULN_BASELINE = {
    BuildingType.MultiFamily: 0.55,
    BuildingType.SingleFamily: 0.45,
    BuildingType.Commercial: 0.40,
    BuildingType.School: 0.70,
    BuildingType.Grocery: 0.50,
    BuildingType.Clinic: 0.65,
}

# larger = more critical; surplus nodes of the lowest rank are repurposed first
PRIORITY = {
    BuildingType.SingleFamily: 1,
    BuildingType.Commercial: 2,
    BuildingType.MultiFamily: 3,
    BuildingType.Grocery: 4,
    BuildingType.School: 5,
    BuildingType.Clinic: 6,
}

FACILITY_MINIMA = {
    BuildingType.School: 1,
    BuildingType.Grocery: 2,
    BuildingType.Clinic: 1,
}


@dataclass(frozen=True)
class NodeRecord:
    id: int
    x: float
    y: float
    btype: BuildingType
    pop: int
    income: float
    energy_burden: float
    vuln: float
    has_sensor: bool
    req: float


@dataclass(frozen=True)
class District:
    nodes: tuple[NodeRecord, ...]
    seed: int

    def __len__(self):
        return len(self.nodes)

    def _col(self, name, dtype=float):
        return np.array([getattr(n, name) for n in self.nodes], dtype=dtype)

    @property
    def xy(self):
        return np.column_stack([self._col("x"), self._col("y")])

    @property
    def types(self):
        return self._col("btype", int)

    @property
    def pop(self):
        return self._col("pop")

    @property
    def income(self):
        return self._col("income")

    @property
    def energy_burden(self):
        return self._col("energy_burden")

    @property
    def vuln(self):
        return self._col("vuln")

    @property
    def req(self):
        return self._col("req")

    @property
    def has_sensor(self):
        return self._col("has_sensor", bool)

    @property
    def sensor_ids(self):
        return np.flatnonzero(self.has_sensor)

    def type_counts(self):
        return np.bincount(self.types, minlength=len(BuildingType))

    def first_of_type(self, btype: BuildingType) -> int | None:
        hits = np.flatnonzero(self.types == int(btype))
        return int(hits[0]) if hits.size else None


def _normalize(values):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo <= 0:
        return np.full_like(values, 0.5, dtype=float)
    return (values - lo) / (hi - lo)


def base_income(x, y):
    """Noise-free income in k$: rises toward the upper-right corner."""
    return 30.0 + 70.0 * (0.5 * np.asarray(x) + 0.5 * np.asarray(y))


def energy_burden_from(income, x, y):
    """Burden falls with normalized income, with a mild sinusoidal spatial texture."""
    spatial = 0.5 + 0.5 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    return np.clip(0.8 * (1.0 - _normalize(income)) + 0.2 * spatial, 0.0, 1.0)


def _enforce_minima(types, rng):
    types = types.copy()
    for btype, need in FACILITY_MINIMA.items():
        deficit = need - int(np.sum(types == btype))
        while deficit > 0:
            counts = np.bincount(types, minlength=len(BuildingType))
            donors = np.flatnonzero(types == BuildingType.MultiFamily)
            if donors.size == 0:
                # fall back to any type holding more than its own minimum
                surplus = [
                    t for t in sorted(BuildingType, key=PRIORITY.get)
                    if t != btype and counts[t] > FACILITY_MINIMA.get(t, 0)
                ]
                donors = np.flatnonzero(types == surplus[0])
            victim = rng.choice(donors)
            types[victim] = btype
            deficit -= 1
    return types


def _sensor_count(fraction, n):
    # round first so that 0.1 * 120 = 12.000000000000002 does not ceil to 13
    return math.ceil(round(fraction * n, 9))


def generate_district(config: DistrictConfig | None = None, seed: int = 0) -> District:
    """Sample ``config.n`` buildings in the unit square.

    Types come from ``config.fractions`` and are then patched so that the
    critical-facility minima hold. Sensors are assigned with
    :func:`assign_sensors` using a stream derived from the same seed.
    """
    config = config or DistrictConfig()
    fractions = np.asarray(config.fractions, dtype=float)
    if fractions.shape != (len(BuildingType),) or np.any(fractions < 0):
        raise ValueError("fractions must hold six nonnegative values")
    if abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"type fractions sum to {fractions.sum():.12g}, expected 1")
    n = int(config.n)
    if n < sum(FACILITY_MINIMA.values()):
        raise ValueError(f"N={n} is too small to hold the facility minima")

    base, sensor_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(base)
    x = rng.uniform(0.0, 1.0, n)
    y = rng.uniform(0.0, 1.0, n)
    types = rng.choice(len(BuildingType), size=n, p=fractions)
    types = _enforce_minima(types, rng)

    pop = np.empty(n, dtype=int)
    for t in BuildingType:
        lo, hi = POP_RANGE[t]
        mask = types == t
        pop[mask] = rng.integers(lo, hi + 1, size=int(mask.sum()))

    income = base_income(x, y) + rng.normal(0.0, config.income_noise_sd, n)
    income = np.clip(income, 20.0, 180.0)
    burden = energy_burden_from(income, x, y)
    baseline = np.array([VULN_BASELINE[BuildingType(t)] for t in types])
    vuln = np.clip(baseline + rng.normal(0.0, config.vuln_noise_sd, n), 0.0, 1.0)
    req = _normalize(pop.astype(float))

    nodes = tuple(
        NodeRecord(
            id=i, x=float(x[i]), y=float(y[i]), btype=BuildingType(int(types[i])),
            pop=int(pop[i]), income=float(income[i]), energy_burden=float(burden[i]),
            vuln=float(vuln[i]), has_sensor=False, req=float(req[i]),
        )
        for i in range(n)
    )
    district = District(nodes=nodes, seed=seed)
    return assign_sensors(district, config.sensor_fraction, sensor_ss)


def assign_sensors(district: District, fraction: float, seed) -> District:
    """Flag exactly ``ceil(fraction * N)`` nodes, drawn without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"sensor fraction must lie in (0, 1], got {fraction}")
    n = len(district)
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(n, size=_sensor_count(fraction, n), replace=False).tolist())
    nodes = tuple(replace(node, has_sensor=node.id in chosen) for node in district.nodes)
    return District(nodes=nodes, seed=district.seed)
