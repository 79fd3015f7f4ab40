"""Stress-driven affiliation graph among buildings and coverage-aware critical nodes."""
from __future__ import annotations

from dataclasses import dataclass, replace

import networkx as nx
import numpy as np
from sklearn.base import BaseEstimator

from ._spatial import nearest_indices, pairwise_distances
from .config import GrlConfig
from .district import District
from .equity import percentile_rank
from .exceptions import NumericalError
from .scenario import HazardTimeline

__all__ = [
    "AffiliationGraph",
    "CriticalReport",
    "build_knn_graph",
    "step_stress",
    "grl_update",
    "raw_centralities",
    "centrality_and_criticals",
    "crit_score",
    "AffiliationLearner",
]

W_MIN, W_MAX = 1e-2, 10.0


@dataclass(frozen=True, eq=False)
class AffiliationGraph:
    """Undirected weighted graph; ``edges[i] = (u, v)`` with ``u < v``."""

    n: int
    types: np.ndarray
    xy: np.ndarray
    pop: np.ndarray
    req: np.ndarray
    edges: np.ndarray
    d: np.ndarray
    w0: np.ndarray
    w: np.ndarray
    sigma: float
    snapshots: tuple = ()

    def gains(self, eps: float = 1e-6) -> np.ndarray:
        return (self.w - self.w0) / (self.w0 + eps)

    def to_networkx(self, eps: float = 1e-6) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(range(self.n))
        for (u, v), w in zip(self.edges, self.w):
            G.add_edge(int(u), int(v), weight=float(w), cost=1.0 / (float(w) + eps))
        return G


@dataclass(frozen=True, eq=False)
class CriticalReport:
    betweenness: np.ndarray
    closeness: np.ndarray
    eigenvector: np.ndarray
    crit_score: np.ndarray
    community: np.ndarray
    per_community: dict  # community id -> top-M node ids
    top_k: np.ndarray
    gain: np.ndarray
    connected: bool


def build_knn_graph(district: District, config: GrlConfig | None = None) -> AffiliationGraph:
    """Union of every node's ``k`` nearest neighbours, weighted ``exp(-d / sigma)`` clipped to the weight range."""
    config = config or GrlConfig()
    n = len(district)
    if n < 2:
        raise ValueError("need at least two nodes")
    if config.k >= n:
        raise ValueError(f"k={config.k} must be smaller than the node count {n}")
    xy = district.xy
    nbrs = nearest_indices(xy, config.k, include_self=False)
    pairs = {(min(i, j), max(i, j)) for i in range(n) for j in map(int, nbrs[i])}
    edges = np.array(sorted(pairs), dtype=int)
    D = pairwise_distances(xy)
    sigma = config.sigma
    if sigma <= 0:
        sigma = float(D[np.arange(n), nearest_indices(xy, 1, include_self=False)[:, 0]].mean())
        if sigma <= 0:
            raise ValueError("all nodes coincide; distance scale is zero")
    d = D[edges[:, 0], edges[:, 1]]
    # start inside the clip range so a no-op update leaves the weights alone
    w0 = np.clip(np.exp(-d / sigma), W_MIN, W_MAX)
    return AffiliationGraph(n, district.types, xy, district.pop, district.req, edges, d, w0, w0.copy(), sigma)


def step_stress(timeline: HazardTimeline, threshold: float = 30.0) -> np.ndarray:
    """Per-step stress in [0, 1]: half outage state, half heat excess over 10 C."""
    heat = np.clip((timeline.T_out - threshold) / 10.0, 0.0, 1.0)
    return 0.5 * timeline.outage + 0.5 * heat


def grl_update(graph: AffiliationGraph, timeline: HazardTimeline, config: GrlConfig | None = None) -> AffiliationGraph:
    """Decay every weight by ``gamma`` and push it along the summed endpoint scores.

    Node scores are ``prior * (1 + stress)`` centred over the nodes at each
    step; all edges update together so edge order is irrelevant.
    """
    config = config or GrlConfig()
    if len(timeline) == 0:
        raise ValueError("timeline is empty")
    prior = np.asarray(config.priors, dtype=float)[graph.types]
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    w = graph.w.copy()
    snaps = []
    for t, s in enumerate(step_stress(timeline)):
        score = prior * (1.0 + s)
        score = score - score.mean()
        w = np.clip(config.gamma * w + config.eta * (score[u] + score[v]), W_MIN, W_MAX)
        if config.snapshot_every and (t + 1) % config.snapshot_every == 0:
            snaps.append((t, w.copy()))
    return replace(graph, w=w, snapshots=tuple(snaps))


def crit_score(b, c, e, pop_rank, req_rank):
    return (0.5 * b + 0.3 * c + 0.2 * e) * (0.5 + 0.5 * pop_rank) * (0.5 + 0.5 * req_rank)


def _communities(G):
    comms = nx.community.greedy_modularity_communities(G, weight="weight")
    comms = sorted((sorted(c) for c in comms), key=lambda c: (-len(c), c[0]))
    label = np.empty(G.number_of_nodes(), dtype=int)
    for cid, members in enumerate(comms):
        label[members] = cid
    return label


def raw_centralities(G: nx.Graph, max_iter: int = 10000):
    """Normalized betweenness and closeness on ``cost``, eigenvector on ``weight``."""
    n = G.number_of_nodes()
    bet = nx.betweenness_centrality(G, weight="cost", normalized=True)
    clo = nx.closeness_centrality(G, distance="cost")
    try:
        eig = nx.eigenvector_centrality(G, max_iter=max_iter, tol=1e-9, weight="weight")
    except nx.PowerIterationFailedConvergence:
        raise NumericalError(f"eigenvector centrality did not converge in {max_iter} iterations") from None
    return tuple(np.array([m[i] for i in range(n)]) for m in (bet, clo, eig))


def centrality_and_criticals(graph: AffiliationGraph, config: GrlConfig | None = None,
                             max_iter: int = 10000) -> CriticalReport:
    """Rank-normalized centralities, composite criticality and community coverage.

    Betweenness and closeness walk the cost ``1 / (w + eps)``; eigenvector
    centrality uses the weights themselves.
    """
    config = config or GrlConfig()
    G = graph.to_networkx(config.eps)
    n = graph.n
    b, c, e = (percentile_rank(v) for v in raw_centralities(G, max_iter))
    score = crit_score(b, c, e, percentile_rank(graph.pop), percentile_rank(graph.req))

    community = _communities(G)
    order = np.lexsort((np.arange(n), -score))
    per = {}
    for cid in range(community.max() + 1):
        members = [int(i) for i in order if community[i] == cid]
        per[cid] = members[: config.M]
    return CriticalReport(b, c, e, score, community, per, order[: config.top_k].copy(),
                          graph.gains(config.eps), nx.is_connected(G))


class AffiliationLearner(BaseEstimator):
    """``fit((district, timeline))`` builds, updates and scores the graph."""

    def __init__(self, k=8, eta=0.01, gamma=0.995, sigma=0.0, M=1, top_k=10,
                 priors=(0.5, 0.3, 0.4, 0.8, 0.6, 1.0)):
        self.k = k
        self.eta = eta
        self.gamma = gamma
        self.sigma = sigma
        self.M = M
        self.top_k = top_k
        self.priors = priors

    def fit(self, X, y=None):
        district, timeline = X
        cfg = GrlConfig(k=self.k, eta=self.eta, gamma=self.gamma, sigma=self.sigma, M=self.M,
                        top_k=self.top_k, priors=tuple(self.priors))
        self.graph_ = grl_update(build_knn_graph(district, cfg), timeline, cfg)
        self.report_ = centrality_and_criticals(self.graph_, cfg)
        return self
