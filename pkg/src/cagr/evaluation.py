"""Temporal splitting, top-n ranking, and the Hits@n / MRR report.

The split cuts the group-item interactions at the 80th-percentile
timestamp: records at or before the cutoff train, later records test,
and the latest tenth of the training records form the validation slice.
Ranking scores every candidate item by its dot product with the group
vector; a test case's candidates are all items except the ones its group
interacted with in training.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import BipartiteGraph

log = logging.getLogger(__name__)

DEFAULT_CUTOFFS = (1, 5, 10, 15, 20)


@dataclass
class SplitSpec:
    """Index arrays into the source graph's edge arrays."""

    source: BipartiteGraph
    train_indices: np.ndarray
    validation_indices: np.ndarray  # subset of train: latest tenth
    test_indices: np.ndarray
    cutoff_ts: int

    def train_graph(self) -> BipartiteGraph:
        return self.source.subset(self.train_indices)

    def edges(self, which):
        idx = {"train": self.train_indices,
               "validation": self.validation_indices,
               "test": self.test_indices}[which]
        g = self.source
        ts = g.edge_ts[idx] if g.edge_ts is not None else np.full(len(idx), -1)
        return list(zip(g.edge_left[idx].tolist(), g.edge_item[idx].tolist(),
                        ts.tolist()))


def temporal_split(gv: BipartiteGraph) -> SplitSpec:
    """Cut at the 80th-percentile timestamp; ties at the cutoff go to train."""
    if gv.edge_ts is None:
        raise ValueError("temporal split requires timestamps on group-item edges")
    n = gv.edge_count
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return SplitSpec(gv, empty, empty, empty, 0)
    order = np.lexsort((gv.edge_item, gv.edge_left, gv.edge_ts))
    cutoff_pos = max(0, math.ceil(0.8 * n) - 1)
    cutoff_ts = int(gv.edge_ts[order[cutoff_pos]])
    in_train = gv.edge_ts <= cutoff_ts
    train = order[in_train[order]]
    test = order[~in_train[order]]
    if len(test) == 0:
        log.warning("temporal split produced an empty test set "
                    "(all %d interactions share the cutoff timestamp range)", n)
    n_val = math.ceil(0.1 * len(train)) if len(train) else 0
    validation = train[len(train) - n_val:]
    return SplitSpec(gv, train, validation, test, cutoff_ts)


@dataclass
class EvalReport:
    hits: dict[int, float]
    mrr: float
    test_case_count: int
    ranks: list[tuple[int, int, int]] = field(default_factory=list)  # (group, item, rank)

    def check(self):
        """Structural sanity: hits monotone in n, and each top-k hit
        contributes at least 1/k to MRR."""
        cutoffs = sorted(self.hits)
        for lo, hi in zip(cutoffs, cutoffs[1:]):
            if self.hits[lo] > self.hits[hi] + 1e-12:
                raise AssertionError(f"hits@{lo} > hits@{hi}")
        for n in cutoffs:
            if not -1e-12 <= self.hits[n] <= 1 + 1e-12:
                raise AssertionError(f"hits@{n} out of [0,1]")
            if self.mrr + 1e-12 < self.hits[n] / n:
                raise AssertionError(f"mrr {self.mrr} < hits@{n}/{n}")
        if not -1e-12 <= self.mrr <= 1 + 1e-12:
            raise AssertionError("mrr out of [0,1]")
        return self


def group_train_items(split: SplitSpec):
    """Per-group set of items interacted with in the training portion."""
    seen = {}
    g = split.source
    for i in split.train_indices:
        seen.setdefault(int(g.edge_left[i]), set()).add(int(g.edge_item[i]))
    return seen


def rank_items(ctx, members, exclusions=(), topn=None):
    """Score all non-excluded items against the group of the given members.

    Returns (item_id, score) pairs sorted by score descending, ties broken
    by ascending item id.
    """
    g_vec, _, _ = ctx.group_vector(np.asarray(members, dtype=np.int64))
    scores = ctx.state.item_emb @ g_vec
    candidates = np.ones(len(scores), dtype=bool)
    for item in exclusions:
        candidates[item] = False
    ids = np.nonzero(candidates)[0]
    order = np.lexsort((ids, -scores[ids].astype(np.float64)))
    ranked = ids[order]
    if topn is not None:
        ranked = ranked[:topn]
    return [(int(i), float(scores[i])) for i in ranked]


def evaluate(ctx, split: SplitSpec, which="test", cutoffs=DEFAULT_CUTOFFS,
             keep_ranks=False) -> EvalReport:
    """Rank each held-out (group, item) case and report Hits@n and MRR.

    The candidate pool for a case is every item except the group's training
    interactions (the ground-truth item always stays in the pool).
    """
    state = ctx.state
    exclusions = group_train_items(split)
    cases = split.edges(which)
    hit_counts = {n: 0 for n in cutoffs}
    rr_sum = 0.0
    ranks = []
    group_vec_cache = {}
    item_ids = np.arange(state.item_emb.shape[0])
    for group, item, _ in cases:
        g_vec = group_vec_cache.get(group)
        if g_vec is None:
            g_vec, _, _ = ctx.group_vector(ctx.member_arrays[group])
            group_vec_cache[group] = g_vec
        scores = state.item_emb @ g_vec
        candidate = np.ones(len(scores), dtype=bool)
        for ex in exclusions.get(group, ()):
            candidate[ex] = False
        candidate[item] = True
        target = scores[item]
        beats = candidate & ((scores > target)
                             | ((scores == target) & (item_ids < item)))
        rank = 1 + int(beats.sum())
        for n in cutoffs:
            if rank <= n:
                hit_counts[n] += 1
        rr_sum += 1.0 / rank
        if keep_ranks:
            ranks.append((group, item, rank))
    count = len(cases)
    hits = {n: (hit_counts[n] / count if count else 0.0) for n in cutoffs}
    mrr = rr_sum / count if count else 0.0
    return EvalReport(hits, mrr, count, ranks).check()
