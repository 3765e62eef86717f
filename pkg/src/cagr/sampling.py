"""All stochastic choices of training: alias-method noise tables, positive
edge draws, and the graph-choosing coin.

Noise distributions over items:
  classic      P(v) proportional to item degree ** 0.75
  group-aware  P(v) proportional to (popularity of v among the group's
               members + gamma) ** 0.75, built lazily per group and cached
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .graphs import BipartiteGraph


class AliasTable:
    """O(1) sampling from a fixed discrete distribution (Vose's method)."""

    def __init__(self, weights):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or len(weights) == 0:
            raise ValueError("weights must be a non-empty 1-d array")
        if (weights < 0).any():
            raise ValueError("weights must be nonnegative")
        total = weights.sum()
        if total <= 0:
            raise DataError("cannot build a sampler: all weights are zero")
        self.n = len(weights)
        self.probability = weights / total
        self.support_size = int((weights > 0).sum())

        scaled = self.probability * self.n
        self.prob = np.ones(self.n)
        self.alias = np.arange(self.n)
        small = [i for i in range(self.n) if scaled[i] < 1.0]
        large = [i for i in range(self.n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            l = large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            if scaled[l] < 1.0:
                small.append(l)
            else:
                large.append(l)
        # leftovers are within rounding of 1; keep prob=1, alias=self

    def sample(self, rng):
        slot = int(rng.integers(self.n))
        if rng.random() < self.prob[slot]:
            return slot
        return int(self.alias[slot])

    def sample_many(self, rng, size):
        slots = rng.integers(self.n, size=size)
        coins = rng.random(size)
        take_alias = coins >= self.prob[slots]
        out = slots.copy()
        out[take_alias] = self.alias[slots[take_alias]]
        return out


def classic_noise(graph: BipartiteGraph) -> AliasTable:
    """Item noise distribution proportional to degree ** 0.75."""
    return AliasTable(graph.item_out_degree ** 0.75)


def group_item_popularity(uv: BipartiteGraph, members) -> np.ndarray:
    """Per-item sum of the members' user-item edge weights."""
    pop = np.zeros(uv.right_count, dtype=np.float64)
    for uid in members:
        items, weights = uv.left_adjacency[uid]
        np.add.at(pop, items, weights)
    return pop


def group_aware_noise(uv: BipartiteGraph, members, gamma) -> AliasTable:
    """Noise proportional to (member popularity + gamma) ** 0.75.

    gamma > 0 keeps nonzero mass on items none of the members touched.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return AliasTable((group_item_popularity(uv, members) + gamma) ** 0.75)


class GroupAwareCache:
    """Lazy per-group noise tables; rebuilt only if gamma changes."""

    def __init__(self, uv: BipartiteGraph, gamma):
        self.uv = uv
        self.gamma = gamma
        self._tables = {}

    def table(self, group_id, members) -> AliasTable:
        tbl = self._tables.get(group_id)
        if tbl is None:
            tbl = group_aware_noise(self.uv, members, self.gamma)
            self._tables[group_id] = tbl
        return tbl

    def set_gamma(self, gamma):
        if gamma != self.gamma:
            self.gamma = gamma
            self._tables.clear()


class EdgeSampler:
    """Weight-proportional positive-edge draws from a bipartite graph
    (uniform when all weights are equal, e.g. unit group-item edges)."""

    def __init__(self, graph: BipartiteGraph):
        if graph.edge_count == 0:
            raise DataError("cannot sample edges from an empty graph")
        self.graph = graph
        self.table = AliasTable(graph.edge_weight)

    def draw(self, rng):
        idx = self.table.sample(rng)
        return int(self.graph.edge_left[idx]), int(self.graph.edge_item[idx])


def draw_positive_edge(graph: BipartiteGraph, rng):
    """One-off weight-proportional edge draw; training uses EdgeSampler."""
    return EdgeSampler(graph).draw(rng)


def choose_graph(eta, rng):
    """Pick 'gv' with probability 1/(1+eta), else 'uv'."""
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    return "gv" if rng.random() < 1.0 / (1.0 + eta) else "uv"


def sample_negatives(table: AliasTable, positive_item, m, rng):
    """Draw m negative items, rejecting draws equal to the positive item.

    If the table's support is only the positive item, rejection cannot
    terminate; fall back to uniform over the other items.
    """
    out = np.empty(m, dtype=np.int64)
    degenerate = (table.support_size == 1
                  and table.probability[positive_item] > 0)
    if degenerate:
        if table.n < 2:
            raise DataError("cannot sample a negative item: only one item exists")
        for i in range(m):
            v = positive_item
            while v == positive_item:
                v = int(rng.integers(table.n))
            out[i] = v
        return out
    for i in range(m):
        v = table.sample(rng)
        while v == positive_item:
            v = table.sample(rng)
        out[i] = v
    return out
