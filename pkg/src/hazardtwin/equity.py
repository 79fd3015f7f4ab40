"""Equity-adjusted node risk and the population-weighted community index."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator

from ._spatial import nearest_indices
from .config import EquityConfig
from .district import District
from .scenario import HazardTimeline

__all__ = [
    "RiskTable",
    "EquityIndex",
    "percentile_rank",
    "knn_smooth",
    "heat_norm",
    "exposure_sys",
    "node_risks",
    "risk_from_components",
    "decile_table",
    "community_index",
    "EquityScorer",
]


@dataclass(frozen=True, eq=False)
class RiskTable:
    """Per-node risk components as parallel arrays."""

    id: np.ndarray
    exposure: np.ndarray
    V: np.ndarray
    E: np.ndarray
    r_node: np.ndarray

    def __len__(self):
        return len(self.id)

    def rows(self):
        return zip(self.id, self.exposure, self.V, self.E, self.r_node)


@dataclass(frozen=True)
class EquityIndex:
    r_eq: float
    gamma: float
    beta_phys: float
    beta_sens: float
    deciles: tuple  # (decile, count, mean, pop_weighted_mean) rows


def percentile_rank(values) -> np.ndarray:
    """Average ranks mapped onto [0, 1]; constant or single-element input gives 0.5."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("percentile_rank needs at least one value")
    if v.size == 1 or np.all(v == v[0]):
        return np.full(v.shape, 0.5)
    return (rankdata(v, method="average") - 1.0) / (v.size - 1.0)


def knn_smooth(xy, values, K: int) -> np.ndarray:
    """Mean over each node's ``K`` nearest nodes, itself included."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if not 1 <= K <= n:
        raise ValueError(f"K must lie in [1, {n}], got {K}")
    if K == 1:
        return values.copy()
    return values[nearest_indices(xy, K)].mean(axis=1)


def heat_norm(T_out, threshold: float = 30.0) -> float:
    return min(float(np.mean(np.maximum(np.asarray(T_out, float) - threshold, 0.0))) / 10.0, 1.0)


def exposure_sys(timeline: HazardTimeline, config: EquityConfig | None = None) -> float:
    """Scalar system exposure from outage duty and mean heat excess, floored at ``eps_exp``."""
    config = config or EquityConfig()
    if len(timeline) == 0:
        raise ValueError("timeline is empty")
    heat = heat_norm(timeline.T_out, config.heat_threshold) if len(timeline) >= 12 else 0.0
    outage_frac = float(np.mean(np.asarray(timeline.outage) > 0.5))
    return max(0.5 * outage_frac + 0.5 * heat, config.eps_exp)


def risk_from_components(exposure, V, E, beta_phys=0.6, beta_sens=0.4):
    return np.asarray(exposure) * (beta_phys * np.asarray(V) + beta_sens * np.asarray(E))


def node_risks(district: District, timeline: HazardTimeline, config: EquityConfig | None = None,
               exposure: float | None = None) -> RiskTable:
    """Ranked vulnerability and sensitivity, optionally spatially smoothed, times exposure.

    A near-constant vulnerability/sensitivity composite is replaced by its ranks
    before the exposure factor is applied.
    """
    config = config or EquityConfig()
    if len(district) == 0:
        raise ValueError("district is empty")
    V = percentile_rank(district.vuln)
    E = percentile_rank(district.energy_burden)
    K = min(config.smooth_k, len(district))
    if K > 1:
        V = percentile_rank(knn_smooth(district.xy, V, K))
        E = percentile_rank(knn_smooth(district.xy, E, K))
    expo = exposure_sys(timeline, config) if exposure is None else float(exposure)
    composite = config.beta_phys * V + config.beta_sens * E
    if np.ptp(composite) < 1e-9:
        composite = percentile_rank(composite)
    ids = np.array([n.id for n in district.nodes], dtype=int)
    return RiskTable(ids, np.full(len(ids), expo), V, E, expo * composite)


def decile_table(r_node, pop, n_bins: int = 10):
    """Rank nodes by risk (ties by position) into ``n_bins`` groups.

    Returns ``(labels, rows)`` where ``labels[i]`` is node i's group (1-based)
    and each row is ``(group, count, mean, pop_weighted_mean)``.
    """
    r = np.asarray(r_node, dtype=float)
    p = np.asarray(pop, dtype=float)
    n = len(r)
    order = np.argsort(r, kind="stable")
    labels = np.empty(n, dtype=int)
    labels[order] = np.arange(n) * n_bins // n + 1
    rows = []
    for d in range(1, n_bins + 1):
        m = labels == d
        if not m.any():
            rows.append((d, 0, float("nan"), float("nan")))
            continue
        w = p[m].sum()
        wm = float((p[m] * r[m]).sum() / w) if w > 0 else float("nan")
        rows.append((d, int(m.sum()), float(r[m].mean()), wm))
    return labels, tuple(rows)


def community_index(risks: RiskTable, district: District, gamma: float = 0.5,
                    beta_phys: float = 0.6, beta_sens: float = 0.4) -> EquityIndex:
    """Population-weighted ``V (1 + gamma E)`` plus the decile table of ``r_node``."""
    pop = district.pop
    if np.any(pop <= 0) and pop.sum() > 0:
        raise ValueError("populations must be positive")
    total = float(pop.sum())
    if total <= 0:
        raise ValueError("total population is zero")
    r_eq = float(np.sum(pop * risks.V * (1.0 + gamma * risks.E)) / total)
    _, rows = decile_table(risks.r_node, pop)
    return EquityIndex(r_eq, gamma, beta_phys, beta_sens, rows)


class EquityScorer(BaseEstimator):
    """``fit((district, timeline))`` stores the risk table and community index."""

    def __init__(self, beta_phys=0.6, beta_sens=0.4, gamma=0.5, eps_exp=0.05, heat_threshold=30.0, smooth_k=5):
        self.beta_phys = beta_phys
        self.beta_sens = beta_sens
        self.gamma = gamma
        self.eps_exp = eps_exp
        self.heat_threshold = heat_threshold
        self.smooth_k = smooth_k

    def fit(self, X, y=None):
        district, timeline = X
        cfg = EquityConfig(**self.get_params())
        self.risks_ = node_risks(district, timeline, cfg)
        self.index_ = community_index(self.risks_, district, self.gamma, self.beta_phys, self.beta_sens)
        return self
