"""Intervention scenarios on node risk, their outcome metrics and Pareto fronts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .district import BuildingType, District
from .equity import RiskTable, risk_from_components
from .scenario import HazardTimeline

__all__ = [
    "Intervention",
    "InterventionOutcome",
    "top_fraction_mask",
    "standard_interventions",
    "apply_intervention",
    "overheating_hours",
    "pop_weighted_risk",
    "eval_metrics",
    "pareto_front",
    "fallback_risks",
    "InterventionPlanner",
]

EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Intervention:
    id: str
    name: str
    mask: np.ndarray  # boolean over nodes, frozen from the baseline ranking
    selector: str
    exposure_scale: float = 1.0
    dV: float = 0.0
    dE: float = 0.0
    staff_hours: float = 0.0
    cost_kusd: float = 0.0
    microgrid: bool = False  # removes the outage for masked nodes when re-simulating

    def __post_init__(self):
        if not 0.0 < self.exposure_scale <= 1.0:
            raise ValueError("exposure scale must lie in (0, 1]")


@dataclass(frozen=True)
class InterventionOutcome:
    id: str
    name: str
    d_rpop_pct: float | None
    d_r95_pct: float | None
    d_oh_pct: float | None
    staff_hours: float
    cost_kusd: float
    n_masked: int
    eff_cost: float | None = None
    eff_staff: float | None = None
    warnings: tuple = field(default_factory=tuple)


def top_fraction_mask(r_node, fraction: float) -> np.ndarray:
    """The ``round(fraction * N)`` highest-risk nodes; ties go to the lower position."""
    r = np.asarray(r_node, dtype=float)
    k = int(round(fraction * len(r)))
    order = np.lexsort((np.arange(len(r)), -r))
    mask = np.zeros(len(r), dtype=bool)
    mask[order[:k]] = True
    return mask


def standard_interventions(risks: RiskTable, district: District) -> list[Intervention]:
    """The five reference scenarios with masks drawn from the baseline risk ranking."""
    top10 = top_fraction_mask(risks.r_node, 0.10)
    top15 = top_fraction_mask(risks.r_node, 0.15)
    clinics = district.types == int(BuildingType.Clinic)
    return [
        Intervention("I1", "Preemptive cooling center", top10, "top decile", 0.70, -0.05, -0.10, 8.0, 50.0),
        Intervention("I2", "Reactive opening", top10, "top decile", 0.90, 0.0, -0.05, 3.0, 15.0),
        Intervention("I3", "Microgrid clinic-first", clinics, "clinics", 0.50, -0.05, 0.0, 0.0, 120.0,
                     microgrid=True),
        Intervention("I4", "Microgrid vulnerable block", top15, "top 15%", 0.65, 0.0, 0.0, 0.0, 180.0,
                     microgrid=True),
        Intervention("I5", "Targeted outreach", top10, "top decile", 1.0, -0.03, -0.12, 6.0, 30.0),
    ]


def apply_intervention(risks: RiskTable, iv: Intervention, beta_phys=0.6, beta_sens=0.4) -> RiskTable:
    m = np.asarray(iv.mask, dtype=bool)
    if m.shape != risks.r_node.shape:
        raise ValueError("intervention mask does not match the node set")
    if not m.any():
        return risks
    expo = risks.exposure.copy()
    V, E, r = risks.V.copy(), risks.E.copy(), risks.r_node.copy()
    expo[m] = np.clip(expo[m] * iv.exposure_scale, 0.0, 1.0)
    V[m] = np.clip(V[m] + iv.dV, 0.0, 1.0)
    E[m] = np.clip(E[m] + iv.dE, 0.0, 1.0)
    r[m] = risk_from_components(expo[m], V[m], E[m], beta_phys, beta_sens)
    return replace(risks, exposure=expo, V=V, E=E, r_node=r)


def overheating_hours(temps, dt_h: float, threshold: float = 30.0) -> float:
    """Hours above ``threshold``, summed over every row of ``temps``."""
    return float(np.sum(np.asarray(temps) > threshold)) * dt_h


def pop_weighted_risk(r_node, pop) -> float:
    pop = np.asarray(pop, dtype=float)
    return float(np.sum(pop * np.asarray(r_node)) / pop.sum())


def _pct(new, old):
    if abs(old) < EPS:
        return None
    return 100.0 * (new - old) / old


def eval_metrics(baseline: RiskTable, post: RiskTable, district: District, timeline: HazardTimeline,
                 iv: Intervention, oh_threshold: float = 30.0, oh_pair=None) -> InterventionOutcome:
    """Percentage changes in population-weighted risk, 95th-percentile risk and overheating hours.

    Overheating hours default to outdoor hours above the threshold, scaled for
    the intervention by the ratio of mean exposures. ``oh_pair`` supplies
    ``(OH_base, OH_post)`` from a re-simulation instead.
    """
    if not np.array_equal(baseline.id, post.id):
        raise ValueError("baseline and post-intervention node sets differ")
    pop = district.pop
    d_pop = _pct(pop_weighted_risk(post.r_node, pop), pop_weighted_risk(baseline.r_node, pop))
    d_95 = _pct(float(np.percentile(post.r_node, 95)), float(np.percentile(baseline.r_node, 95)))
    if oh_pair is None:
        oh = overheating_hours(timeline.T_out, timeline.dt_h, oh_threshold)
        mean_b = float(np.mean(baseline.exposure))
        ratio = float(np.mean(post.exposure)) / mean_b if mean_b > EPS else 1.0
        oh_pair = (oh, oh * ratio)
    d_oh = _pct(oh_pair[1], oh_pair[0])
    notes = () if np.any(iv.mask) else ("empty mask: identity intervention",)
    eff_c = d_pop / iv.cost_kusd if d_pop is not None and iv.cost_kusd > 0 else None
    eff_s = d_pop / iv.staff_hours if d_pop is not None and iv.staff_hours > 0 else None
    return InterventionOutcome(iv.id, iv.name, d_pop, d_95, d_oh, iv.staff_hours, iv.cost_kusd,
                               int(np.sum(iv.mask)), eff_c, eff_s, notes)


def pareto_front(points) -> np.ndarray:
    """Mask of the points not dominated when minimizing every column.

    ``a`` dominates ``b`` when it is no worse on all axes and better on one.
    Duplicated points do not dominate each other.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or len(P) == 0:
        raise ValueError("need a non-empty (n, m) array")
    order = np.lexsort(P.T[::-1])  # sort by first axis, then the rest
    keep = np.ones(len(P), dtype=bool)
    front = []
    for i in order:
        p = P[i]
        for q in front:
            if np.all(q <= p) and np.any(q < p):
                keep[i] = False
                break
        if keep[i]:
            front.append(p)
    return keep


def fallback_risks(district: District, exposure=0.5, level=0.5, beta_phys=0.6, beta_sens=0.4) -> RiskTable:
    """Uniform risk frame used when no equity results are available."""
    n = len(district)
    ids = np.array([nd.id for nd in district.nodes], dtype=int)
    V = np.full(n, level)
    E = np.full(n, level)
    expo = np.full(n, float(exposure))
    return RiskTable(ids, expo, V, E, risk_from_components(expo, V, E, beta_phys, beta_sens))


class InterventionPlanner(BaseEstimator):
    """``fit((district, timeline, risks))`` scores the standard interventions.

    ``outcomes_`` lists one :class:`InterventionOutcome` per scenario and
    ``cost_front_`` / ``staff_front_`` flag Pareto membership.
    """

    def __init__(self, oh_threshold=30.0):
        self.oh_threshold = oh_threshold

    def fit(self, X, y=None):
        district, timeline, risks = X
        self.interventions_ = standard_interventions(risks, district)
        self.outcomes_ = [eval_metrics(risks, apply_intervention(risks, iv), district, timeline, iv,
                                       self.oh_threshold) for iv in self.interventions_]
        self.cost_front_ = pareto_front([[o.cost_kusd, o.d_rpop_pct] for o in self.outcomes_])
        self.staff_front_ = pareto_front([[o.staff_hours, o.d_rpop_pct] for o in self.outcomes_])
        return self
