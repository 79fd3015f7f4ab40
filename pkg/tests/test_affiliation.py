import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from hazardtwin.affiliation import (AffiliationGraph, AffiliationLearner, build_knn_graph, centrality_and_criticals,
                                    crit_score, grl_update, raw_centralities, step_stress)
from hazardtwin.config import GrlConfig, ScenarioConfig
from hazardtwin.district import BuildingType
from hazardtwin.scenario import build_timeline

from helpers import make_district


def test_two_nodes_one_sigma_apart():
    g = build_knn_graph(make_district([[0.0, 0.0], [0.3, 0.4]]), GrlConfig(k=1, sigma=0.5))
    assert g.edges.tolist() == [[0, 1]]
    assert g.w0[0] == pytest.approx(math.exp(-1.0))


def test_full_neighbourhood_is_complete():
    rng = np.random.default_rng(0)
    n = 9
    g = build_knn_graph(make_district(rng.random((n, 2))), GrlConfig(k=n - 1))
    assert len(g.edges) == n * (n - 1) // 2


def test_k_too_large():
    with pytest.raises(ValueError):
        build_knn_graph(make_district(np.random.default_rng(1).random((5, 2))), GrlConfig(k=5))


def test_default_graph_connected(district):
    rep = centrality_and_criticals(build_knn_graph(district))
    assert rep.connected


def test_identity_update(district, timeline):
    g = build_knn_graph(district)
    out = grl_update(g, timeline, GrlConfig(eta=0.0, gamma=1.0))
    assert np.array_equal(out.w, g.w)


def _line_of_types(types):
    xy = np.column_stack([np.arange(len(types)) * 0.1, np.zeros(len(types))])
    return make_district(xy, types=types)


def test_high_prior_pair_outgains_low_prior_pair():
    T = BuildingType
    d = _line_of_types([T.Clinic, T.School, T.SingleFamily, T.SingleFamily])
    g = build_knn_graph(d, GrlConfig(k=1, sigma=0.1))
    tl = build_timeline(ScenarioConfig(duration_h=6.0, amplitude=0.0, t_mean=35.0))
    out = grl_update(g, tl, GrlConfig(k=1))
    edges = [tuple(e) for e in out.edges]
    assert out.w[edges.index((0, 1))] > out.w[edges.index((2, 3))]


def test_sustained_push_pins_at_upper_clip():
    T = BuildingType
    d = _line_of_types([T.Clinic, T.Clinic, T.SingleFamily])
    g = build_knn_graph(d, GrlConfig(k=1, sigma=0.1))
    out = grl_update(g, build_timeline(), GrlConfig(k=1, eta=5.0, gamma=1.0))
    edges = [tuple(e) for e in out.edges]
    assert out.w[edges.index((0, 1))] == 10.0


@given(st.floats(0, 10), st.floats(0.5, 1.2), st.integers(0, 50))
def test_weights_stay_clipped(eta, gamma, seed):
    d = make_district(np.random.default_rng(seed).random((12, 2)),
                      types=np.random.default_rng(seed).integers(0, 6, 12))
    out = grl_update(build_knn_graph(d, GrlConfig(k=3)), build_timeline(ScenarioConfig(duration_h=12.0)),
                     GrlConfig(k=3, eta=eta, gamma=gamma))
    assert np.all((out.w >= 1e-2) & (out.w <= 10.0))


def test_update_ignores_edge_order(district):
    tl = build_timeline(ScenarioConfig(duration_h=12.0))
    g = build_knn_graph(district)
    perm = np.random.default_rng(3).permutation(len(g.edges))
    shuffled = AffiliationGraph(g.n, g.types, g.xy, g.pop, g.req, g.edges[perm], g.d[perm], g.w0[perm],
                                g.w[perm], g.sigma)
    a, b = grl_update(g, tl), grl_update(shuffled, tl)
    assert np.array_equal(a.w[perm], b.w)


def test_stress_range(timeline):
    s = step_stress(timeline)
    assert np.all((s >= 0) & (s <= 1))


def _brute_betweenness(n, cost):
    """All simple paths per pair; share each pair's credit over its shortest paths."""
    adj = {u: [v for v in range(n) if (u, v) in cost] for u in range(n)}

    def paths(s, t):
        stack = [(s, [s], 0.0)]
        while stack:
            u, path, length = stack.pop()
            if u == t:
                yield path, length
                continue
            for v in adj[u]:
                if v not in path:
                    stack.append((v, path + [v], length + cost[(u, v)]))

    b = np.zeros(n)
    for s, t in itertools.combinations(range(n), 2):
        found = list(paths(s, t))
        if not found:
            continue
        best = min(length for _, length in found)
        shortest = [p for p, length in found if length == best]
        for p in shortest:
            for v in p[1:-1]:
                b[v] += 1.0 / len(shortest)
    return b * 2.0 / ((n - 1) * (n - 2))


def test_betweenness_matches_brute_force():
    n = 8
    for seed in range(100):
        rng = np.random.default_rng(seed)
        G = nx.Graph()
        G.add_nodes_from(range(n))
        cost = {}
        for u, v in itertools.combinations(range(n), 2):
            if rng.random() < 0.45:
                c = float(rng.integers(1, 4))  # small integers create tied shortest paths
                G.add_edge(u, v, cost=c, weight=1.0 / c)
                cost[(u, v)] = cost[(v, u)] = c
        if G.number_of_edges() == 0:
            continue
        bet, _, _ = raw_centralities(G)
        assert np.allclose(bet, _brute_betweenness(n, cost), atol=1e-12), seed


def _path_graph():
    d = make_district([[0.0, 0.0], [0.1, 0.0], [0.2, 0.0]])
    g = build_knn_graph(d, GrlConfig(k=1, sigma=0.1))
    ones = np.ones(len(g.edges))
    return AffiliationGraph(g.n, g.types, g.xy, g.pop, g.req, g.edges, g.d, ones, ones.copy(), g.sigma)


def test_path_middle_ranks_highest():
    rep = centrality_and_criticals(_path_graph(), GrlConfig(k=1))
    assert rep.betweenness[1] > rep.betweenness[0] and rep.betweenness[1] > rep.betweenness[2]


def test_unchanged_weights_have_zero_gain():
    assert np.all(_path_graph().gains() == 0)


def test_single_community_picks_argmax():
    rep = centrality_and_criticals(_path_graph(), GrlConfig(k=1, M=1))
    for cid, members in rep.per_community.items():
        inside = np.flatnonzero(rep.community == cid)
        assert members == [int(inside[np.argmax(rep.crit_score[inside])])]


@given(*[st.floats(0, 1)] * 5)
def test_crit_score_bounds(b, c, e, p, r):
    s = crit_score(b, c, e, p, r)
    assert 0.0 <= s <= 1.0 + 1e-12
    assert s >= 0.25 * (0.5 * b + 0.3 * c + 0.2 * e) - 1e-12


def test_default_report(district, timeline):
    learner = AffiliationLearner().fit((district, timeline))
    rep = learner.report_
    assert len(rep.top_k) == 10
    assert set(rep.per_community) == set(range(rep.community.max() + 1))
    assert np.all((rep.crit_score >= 0) & (rep.crit_score <= 1))
