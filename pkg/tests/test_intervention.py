import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hazardtwin.district import BuildingType
from hazardtwin.equity import RiskTable, node_risks
from hazardtwin.intervention import (Intervention, InterventionPlanner, apply_intervention, eval_metrics,
                                     fallback_risks, overheating_hours, pareto_front, standard_interventions,
                                     top_fraction_mask)
from hazardtwin.scenario import HazardTimeline

from helpers import make_district


def _uniform(n=4, level=0.5):
    f = np.full(n, level)
    return RiskTable(np.arange(n), f.copy(), f.copy(), f.copy(), 0.5 * (0.6 * f + 0.4 * f))


def _iv(mask, s=1.0, dV=0.0, dE=0.0):
    return Intervention("X", "test", np.asarray(mask, bool), "custom", s, dV, dE)


def test_cooling_center_single_node():
    out = apply_intervention(_uniform(1), _iv([True], 0.70, -0.05, -0.10))
    assert out.exposure[0] == pytest.approx(0.35)
    assert out.V[0] == pytest.approx(0.45)
    assert out.E[0] == pytest.approx(0.40)
    assert out.r_node[0] == pytest.approx(0.35 * (0.6 * 0.45 + 0.4 * 0.40))
    assert out.r_node[0] == pytest.approx(0.1505)


def test_null_intervention_is_identity(district, timeline):
    base = node_risks(district, timeline)
    iv = _iv(np.ones(len(district)))
    post = apply_intervention(base, iv)
    assert np.array_equal(post.r_node, base.r_node)
    out = eval_metrics(base, post, district, timeline, iv)
    assert out.d_rpop_pct == 0 and out.d_r95_pct == 0 and out.d_oh_pct == 0


def test_uniform_scaling_gives_minus_ten(district, timeline):
    base = node_risks(district, timeline)
    post = replace(base, r_node=0.9 * base.r_node, exposure=0.9 * base.exposure)
    out = eval_metrics(base, post, district, timeline, _iv(np.ones(len(district))))
    assert out.d_rpop_pct == pytest.approx(-10.0)
    assert out.d_r95_pct == pytest.approx(-10.0)


def test_overheating_hours_scaling():
    T_out = np.array([29.0, 31.0, 32.0, 29.0])
    tl = HazardTimeline(1.0, np.arange(4.0), T_out, np.zeros(4, int), np.zeros(4))
    assert overheating_hours(T_out, 1.0, 30.0) == 2.0
    d = make_district([[0, 0], [1, 1]])
    base = RiskTable(np.arange(2), np.full(2, 0.5), np.full(2, 0.5), np.full(2, 0.5), np.full(2, 0.25))
    post = replace(base, exposure=np.full(2, 0.45))
    out = eval_metrics(base, post, d, tl, _iv([True, True]))
    assert out.d_oh_pct == pytest.approx(-10.0)


def test_zero_baseline_is_undefined():
    d = make_district([[0, 0], [1, 1]])
    tl = HazardTimeline(1.0, np.arange(3.0), np.full(3, 25.0), np.zeros(3, int), np.zeros(3))
    zero = RiskTable(np.arange(2), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))
    out = eval_metrics(zero, zero, d, tl, _iv([True, False]))
    assert out.d_rpop_pct is None and out.d_oh_pct is None


def test_standard_set(district, timeline):
    ivs = standard_interventions(node_risks(district, timeline), district)
    assert [iv.id for iv in ivs] == ["I1", "I2", "I3", "I4", "I5"]
    assert [(iv.staff_hours, iv.cost_kusd) for iv in ivs] == [(8, 50), (3, 15), (0, 120), (0, 180), (6, 30)]
    assert ivs[0].mask.sum() == 12
    assert ivs[3].mask.sum() == 18
    assert np.array_equal(ivs[2].mask, district.types == int(BuildingType.Clinic))


def test_no_clinics_gives_empty_mask_warning(timeline):
    rng = np.random.default_rng(0)
    d = make_district(rng.random((20, 2)), types=[BuildingType.MultiFamily] * 20)
    base = node_risks(d, timeline)
    i3 = standard_interventions(base, d)[2]
    assert not i3.mask.any()
    post = apply_intervention(base, i3)
    assert post is base
    out = eval_metrics(base, post, d, timeline, i3)
    assert out.warnings == ("empty mask: identity intervention",)
    assert out.d_rpop_pct == 0


def test_top_fraction_tie_break():
    assert top_fraction_mask([0.5, 0.9, 0.5, 0.5], 0.5).tolist() == [True, True, False, False]


def _brute_front(P):
    keep = []
    for i, p in enumerate(P):
        dominated = any(np.all(q <= p) and np.any(q < p) for j, q in enumerate(P) if j != i)
        keep.append(not dominated)
    return np.array(keep)


def test_pareto_matches_pairwise_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        m = int(rng.integers(2, 4))
        P = rng.integers(0, 6, (n, m)).astype(float)  # coarse grid produces ties and duplicates
        assert np.array_equal(pareto_front(P), _brute_front(P))


def test_pareto_examples():
    front = pareto_front([[50.0, -11.6], [180.0, -12.9], [120.0, -0.5]])
    assert front.tolist() == [True, True, False]
    assert pareto_front([[1.0, 2.0]]).tolist() == [True]
    with pytest.raises(ValueError):
        pareto_front(np.empty((0, 2)))


@given(st.integers(0, 10_000), st.floats(0.1, 1), st.floats(-0.3, 0), st.floats(-0.3, 0),
       st.floats(0.1, 1), st.floats(-0.3, 0), st.floats(-0.3, 0))
def test_disjoint_masks_commute(seed, s1, v1, e1, s2, v2, e2):
    rng = np.random.default_rng(seed)
    n = 30
    base = RiskTable(np.arange(n), rng.random(n), rng.random(n), rng.random(n), np.zeros(n))
    base = replace(base, r_node=base.exposure * (0.6 * base.V + 0.4 * base.E))
    labels = rng.integers(0, 3, n)
    a, b = _iv(labels == 1, s1, v1, e1), _iv(labels == 2, s2, v2, e2)
    ab = apply_intervention(apply_intervention(base, a), b)
    ba = apply_intervention(apply_intervention(base, b), a)
    assert np.array_equal(ab.r_node, ba.r_node)


@given(st.integers(0, 10_000), st.floats(0.05, 1), st.floats(-0.5, 0), st.floats(-0.5, 0), st.floats(0, 1))
def test_risk_reducing_interventions_never_raise_risk(seed, s, dV, dE, frac):
    rng = np.random.default_rng(seed)
    n = 40
    d = make_district(rng.random((n, 2)), pop=rng.integers(1, 300, n))
    tl = HazardTimeline(1.0, np.arange(24.0), np.full(24, 35.0), np.zeros(24, int), np.zeros(24))
    base = RiskTable(np.arange(n), np.full(n, 0.6), rng.random(n), rng.random(n), np.zeros(n))
    base = replace(base, r_node=base.exposure * (0.6 * base.V + 0.4 * base.E))
    iv = _iv(top_fraction_mask(base.r_node, frac), s, dV, dE)
    post = apply_intervention(base, iv)
    assert np.all(post.r_node <= base.r_node + 1e-15)
    out = eval_metrics(base, post, d, tl, iv)
    assert out.d_rpop_pct <= 1e-12 and out.d_r95_pct <= 1e-12


def test_fallback_frame(district):
    r = fallback_risks(district)
    assert np.allclose(r.r_node, 0.25)


def test_planner_fronts(district, timeline):
    planner = InterventionPlanner().fit((district, timeline, node_risks(district, timeline)))
    ids = [o.id for o in planner.outcomes_]
    assert ids == ["I1", "I2", "I3", "I4", "I5"]
    assert all(o.d_rpop_pct <= 0 for o in planner.outcomes_)
    assert len(planner.cost_front_) == 5
