"""Node centrality measures on the social graph and the centrality-ranked
neighbor views they define.

All four measures named by the model are provided: pagerank, eigenvector,
closeness, betweenness. Rankings are deterministic: neighbor ties are
broken by ascending user id.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .graphs import SocialGraph

MEASURES = ("pagerank", "eigenvector", "closeness", "betweenness")


@dataclass
class CentralityScores:
    measure: str
    scores: np.ndarray  # float64, one score per user


def _degree_vector(g: SocialGraph):
    return np.array([len(a) for a in g.adjacency], dtype=np.float64)


def pagerank(g: SocialGraph, damping=0.85, tol=1e-10, max_iter=200) -> CentralityScores:
    """Power iteration with uniform teleport; dangling mass spread uniformly.

    Converges when the L1 change between iterates drops below tol; scores
    sum to 1.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must be in (0,1), got {damping}")
    n = g.user_count
    if n == 0:
        return CentralityScores("pagerank", np.zeros(0))
    deg = _degree_vector(g)
    dangling = deg == 0
    x = np.full(n, 1.0 / n)
    teleport = (1.0 - damping) / n
    for _ in range(max_iter):
        contrib = np.where(dangling, 0.0, x / np.maximum(deg, 1.0))
        new = np.full(n, teleport + damping * x[dangling].sum() / n)
        for u, nbrs in enumerate(g.adjacency):
            if len(nbrs):
                new[nbrs] += damping * contrib[u]
        residual = np.abs(new - x).sum()
        x = new
        if residual < tol:
            return CentralityScores("pagerank", x)
    raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations", residual)


def eigenvector_centrality(g: SocialGraph, tol=1e-10, max_iter=500) -> CentralityScores:
    """Power iteration on A + I (the shift avoids oscillation on bipartite
    components); output has unit L2 norm."""
    n = g.user_count
    if n == 0:
        return CentralityScores("eigenvector", np.zeros(0))
    x = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        new = x.copy()
        for u, nbrs in enumerate(g.adjacency):
            if len(nbrs):
                new[u] += x[nbrs].sum()
        norm = np.linalg.norm(new)
        if norm > 0:
            new /= norm
        residual = np.abs(new - x).sum()
        x = new
        if residual < tol:
            return CentralityScores("eigenvector", x)
    raise ConvergenceError(f"eigenvector centrality did not converge in {max_iter} iterations",
                           residual)


def _bfs_distances(g: SocialGraph, source):
    dist = np.full(g.user_count, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in g.adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def closeness_centrality(g: SocialGraph) -> CentralityScores:
    """(reachable - 1) / sum of shortest-path distances within the node's
    component; isolated nodes score 0."""
    n = g.user_count
    scores = np.zeros(n)
    for u in range(n):
        dist = _bfs_distances(g, u)
        reachable = dist >= 0
        total = dist[reachable].sum()
        count = int(reachable.sum())
        if count > 1 and total > 0:
            scores[u] = (count - 1) / total
    return CentralityScores("closeness", scores)


def _brandes_accumulate(g: SocialGraph, source, scores):
    """One source's dependency accumulation (Brandes), added into scores."""
    n = g.user_count
    sigma = np.zeros(n)
    sigma[source] = 1.0
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    order = []
    preds = [[] for _ in range(n)]
    queue = deque([source])
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in g.adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
            if dist[v] == dist[u] + 1:
                sigma[v] += sigma[u]
                preds[v].append(u)
    delta = np.zeros(n)
    for v in reversed(order):
        for u in preds[v]:
            delta[u] += sigma[u] / sigma[v] * (1.0 + delta[v])
        if v != source:
            scores[v] += delta[v]


def betweenness_centrality(g: SocialGraph, sample_sources=None, seed=0) -> CentralityScores:
    """Unnormalized pair counts: how many shortest paths pass through each
    node, counting each unordered pair once.

    With sample_sources set, runs Brandes from a uniform sample of sources
    (without replacement) and rescales by n/k, an unbiased estimate that
    equals the exact count when sample_sources == user count.
    """
    n = g.user_count
    scores = np.zeros(n)
    if n == 0:
        return CentralityScores("betweenness", scores)
    if sample_sources is None or sample_sources >= n:
        sources = range(n)
        scale = 0.5
    else:
        k = max(1, int(sample_sources))
        rng = np.random.default_rng(seed)
        sources = rng.choice(n, size=k, replace=False)
        scale = 0.5 * n / k
    for s in sources:
        _brandes_accumulate(g, int(s), scores)
    return CentralityScores("betweenness", scores * scale)


def compute_measures(g: SocialGraph, measures=MEASURES) -> list[CentralityScores]:
    out = []
    for name in measures:
        if name == "pagerank":
            out.append(pagerank(g))
        elif name == "eigenvector":
            out.append(eigenvector_centrality(g))
        elif name == "closeness":
            out.append(closeness_centrality(g))
        elif name == "betweenness":
            out.append(betweenness_centrality(g))
        else:
            raise ValueError(f"unknown centrality measure {name!r}")
    return out


def build_views(g: SocialGraph, scores: list[CentralityScores]) -> SocialGraph:
    """Populate g.views: per measure, each user's neighbors sorted by score
    descending, ties by ascending user id. Returns g for chaining."""
    for cs in scores:
        ranked = []
        for nbrs in g.adjacency:
            if len(nbrs) == 0:
                ranked.append(nbrs.copy())
                continue
            # np.lexsort sorts by last key first: score desc, then id asc
            order = np.lexsort((nbrs, -cs.scores[nbrs]))
            ranked.append(nbrs[order])
        g.views[cs.measure] = ranked
    return g
