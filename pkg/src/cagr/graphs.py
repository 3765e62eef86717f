"""Interaction graph storage: user-item and group-item bipartite graphs,
the user social graph, and the group membership table.

All structures are immutable after load and safe for concurrent reads.
Node ids are dense 0-based integers; the original-id mapping produced at
load time can be persisted and reused so reloads are bit-identical.

File formats (UTF-8, tab-separated, lines starting with '#' are comments):

    user_item.tsv   user <TAB> item <TAB> weight [<TAB> timestamp]
    group_item.tsv  group <TAB> item <TAB> timestamp
    groups.tsv      group <TAB> member,member,...
    social.tsv      user <TAB> user
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass
class BipartiteGraph:
    """Weighted edges between a left node set (users or groups) and items."""

    left_count: int
    right_count: int
    # parallel arrays, one entry per edge
    edge_left: np.ndarray      # int64
    edge_item: np.ndarray      # int64
    edge_weight: np.ndarray    # float64, all > 0
    edge_ts: np.ndarray | None  # int64 seconds, or None when absent
    # per-left-node adjacency: list of (item_ids array, weights array)
    left_adjacency: list[tuple[np.ndarray, np.ndarray]] = field(repr=False, default_factory=list)
    item_out_degree: np.ndarray = field(repr=False, default=None)  # float64, sum of incident weights

    @property
    def edge_count(self):
        return len(self.edge_left)

    def left_degree(self, left_id):
        """Sum of edge weights incident to a left node."""
        _, weights = self.left_adjacency[left_id]
        return float(weights.sum())

    def subset(self, edge_indices):
        """New graph over the same node sets keeping only the given edges."""
        idx = np.asarray(edge_indices, dtype=np.int64)
        edges = {}
        for i in idx:
            key = (int(self.edge_left[i]), int(self.edge_item[i]))
            ts = int(self.edge_ts[i]) if self.edge_ts is not None else -1
            edges[key] = [float(self.edge_weight[i]), ts]
        return _build_bipartite(self.left_count, self.right_count, edges,
                                self.edge_ts is not None)

    def equals(self, other):
        if (self.left_count, self.right_count) != (other.left_count, other.right_count):
            return False
        if not (np.array_equal(self.edge_left, other.edge_left)
                and np.array_equal(self.edge_item, other.edge_item)
                and np.array_equal(self.edge_weight, other.edge_weight)):
            return False
        if (self.edge_ts is None) != (other.edge_ts is None):
            return False
        if self.edge_ts is not None and not np.array_equal(self.edge_ts, other.edge_ts):
            return False
        return True


@dataclass
class SocialGraph:
    """Undirected user-user graph plus centrality-ranked neighbor views."""

    user_count: int
    adjacency: list[np.ndarray]            # per-user sorted neighbor ids
    views: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def check_symmetry(self):
        neighbor_sets = [set(a.tolist()) for a in self.adjacency]
        for u, nbrs in enumerate(neighbor_sets):
            for v in nbrs:
                if u not in neighbor_sets[v]:
                    raise DataError(f"social graph asymmetric: {u} -> {v} has no reverse edge")

    def equals(self, other):
        if self.user_count != other.user_count:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.adjacency, other.adjacency))


@dataclass
class GroupTable:
    """Per-group member id lists; every list is non-empty and duplicate-free."""

    members: list[np.ndarray]

    @property
    def group_count(self):
        return len(self.members)

    def equals(self, other):
        if self.group_count != other.group_count:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.members, other.members))


class IdMap:
    """Original-id <-> dense-int mapping for one node namespace."""

    def __init__(self, frozen=None):
        self._to_dense = dict(frozen) if frozen else {}
        self._frozen = frozen is not None

    def get_or_add(self, original):
        dense = self._to_dense.get(original)
        if dense is None:
            if self._frozen:
                raise DataError(f"id {original!r} not present in the saved id mapping")
            dense = len(self._to_dense)
            self._to_dense[original] = dense
        return dense

    def lookup(self, original):
        dense = self._to_dense.get(original)
        if dense is None:
            raise DataError(f"unknown id {original!r}")
        return dense

    def __len__(self):
        return len(self._to_dense)

    def to_dict(self):
        return dict(self._to_dense)

    def originals(self):
        """Original ids ordered by dense id."""
        out = [None] * len(self._to_dense)
        for orig, dense in self._to_dense.items():
            out[dense] = orig
        return out


@dataclass
class Dataset:
    """Everything load_dataset produces: the three graphs, the group table,
    and the id mappings needed to emit results in original ids."""

    uv: BipartiteGraph
    gv: BipartiteGraph
    uu: SocialGraph
    groups: GroupTable
    user_ids: IdMap
    item_ids: IdMap
    group_ids: IdMap

    def save_id_maps(self, path):
        payload = {
            "users": self.user_ids.to_dict(),
            "items": self.item_ids.to_dict(),
            "groups": self.group_ids.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=0, sort_keys=True)

    @staticmethod
    def load_id_maps(path):
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return (IdMap(payload["users"]), IdMap(payload["items"]), IdMap(payload["groups"]))


def _parse_lines(path):
    """Yield (line_number, fields) for every non-comment, non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def _malformed(path, lineno, reason):
    return DataError(f"{path}:{lineno}: {reason}")


def _build_bipartite(left_count, right_count, edges, with_ts):
    """edges: dict (left, item) -> [weight, ts]. Sorted for determinism."""
    keys = sorted(edges)
    n = len(keys)
    edge_left = np.empty(n, dtype=np.int64)
    edge_item = np.empty(n, dtype=np.int64)
    edge_weight = np.empty(n, dtype=np.float64)
    edge_ts = np.empty(n, dtype=np.int64) if with_ts else None
    for idx, key in enumerate(keys):
        edge_left[idx] = key[0]
        edge_item[idx] = key[1]
        weight, ts = edges[key]
        edge_weight[idx] = weight
        if with_ts:
            edge_ts[idx] = ts

    adjacency = []
    start = 0
    for left in range(left_count):
        end = start
        while end < n and edge_left[end] == left:
            end += 1
        adjacency.append((edge_item[start:end].copy(), edge_weight[start:end].copy()))
        start = end

    out_degree = np.zeros(right_count, dtype=np.float64)
    np.add.at(out_degree, edge_item, edge_weight)
    return BipartiteGraph(left_count, right_count, edge_left, edge_item,
                          edge_weight, edge_ts, adjacency, out_degree)


def load_dataset(user_item_path, group_item_path, groups_path, social_path, id_maps=None):
    """Load and validate the four dataset files.

    Duplicate user-item edges are merged by summing weights; duplicate
    group-item edges collapse to weight 1 keeping the earliest timestamp.
    An asymmetric social edge list is symmetrized with a warning. Group
    members must already appear in the user-item or social files.
    """
    if id_maps is not None:
        user_ids, item_ids, group_ids = id_maps
    else:
        user_ids, item_ids, group_ids = IdMap(), IdMap(), IdMap()

    # user-item edges: (user, item) -> [summed weight, earliest ts or -1]
    uv_edges = {}
    uv_has_ts = False
    for lineno, fields in _parse_lines(user_item_path):
        if len(fields) not in (3, 4):
            raise _malformed(user_item_path, lineno, f"expected 3 or 4 fields, got {len(fields)}")
        try:
            weight = float(fields[2])
        except ValueError:
            raise _malformed(user_item_path, lineno, f"bad weight {fields[2]!r}") from None
        if weight <= 0:
            raise _malformed(user_item_path, lineno, f"edge weight must be > 0, got {weight}")
        ts = None
        if len(fields) == 4:
            try:
                ts = int(fields[3])
            except ValueError:
                raise _malformed(user_item_path, lineno, f"bad timestamp {fields[3]!r}") from None
            uv_has_ts = True
        key = (user_ids.get_or_add(fields[0]), item_ids.get_or_add(fields[1]))
        entry = uv_edges.get(key)
        if entry is None:
            uv_edges[key] = [weight, ts if ts is not None else -1]
        else:
            entry[0] += weight
            if ts is not None and (entry[1] < 0 or ts < entry[1]):
                entry[1] = ts

    # social edges (may introduce users not seen in user_item)
    social_pairs = set()
    directed_seen = set()
    for lineno, fields in _parse_lines(social_path):
        if len(fields) != 2:
            raise _malformed(social_path, lineno, f"expected 2 fields, got {len(fields)}")
        u = user_ids.get_or_add(fields[0])
        v = user_ids.get_or_add(fields[1])
        if u == v:
            log.warning("%s:%d: dropping self-loop on user %r", social_path, lineno, fields[0])
            continue
        directed_seen.add((u, v))
        social_pairs.add((min(u, v), max(u, v)))

    asymmetric = sum(1 for (u, v) in social_pairs
                     if ((u, v) in directed_seen) != ((v, u) in directed_seen))
    if asymmetric:
        log.warning("%s: %d social edges listed in one direction only; symmetrized",
                    social_path, asymmetric)

    # group-item edges (weight forced to 1, timestamp required)
    gv_edges = {}
    for lineno, fields in _parse_lines(group_item_path):
        if len(fields) != 3:
            raise _malformed(group_item_path, lineno, f"expected 3 fields, got {len(fields)}")
        try:
            ts = int(fields[2])
        except ValueError:
            raise _malformed(group_item_path, lineno, f"bad timestamp {fields[2]!r}") from None
        key = (group_ids.get_or_add(fields[0]), item_ids.get_or_add(fields[1]))
        entry = gv_edges.get(key)
        if entry is None:
            gv_edges[key] = [1.0, ts]
        elif ts < entry[1]:
            entry[1] = ts

    # group membership; members must be known users
    member_lists = {}
    for lineno, fields in _parse_lines(groups_path):
        if len(fields) != 2:
            raise _malformed(groups_path, lineno, f"expected 2 fields, got {len(fields)}")
        gid = group_ids.get_or_add(fields[0])
        members = []
        seen = set()
        for token in fields[1].split(","):
            token = token.strip()
            if not token:
                continue
            try:
                uid = user_ids.lookup(token)
            except DataError:
                raise _malformed(groups_path, lineno,
                                 f"group {fields[0]!r} lists unknown user id {token!r}") from None
            if uid not in seen:
                seen.add(uid)
                members.append(uid)
        if not members:
            raise _malformed(groups_path, lineno, f"group {fields[0]!r} has no members")
        member_lists[gid] = np.array(sorted(members), dtype=np.int64)

    n_users, n_items, n_groups = len(user_ids), len(item_ids), len(group_ids)

    for gid in range(n_groups):
        if gid not in member_lists:
            orig = group_ids.originals()[gid]
            raise DataError(f"group {orig!r} interacts with items but has no membership row")

    adjacency_sets = [set() for _ in range(n_users)]
    for u, v in social_pairs:
        adjacency_sets[u].add(v)
        adjacency_sets[v].add(u)
    adjacency = [np.array(sorted(s), dtype=np.int64) for s in adjacency_sets]

    uv = _build_bipartite(n_users, n_items, uv_edges, uv_has_ts)
    gv = _build_bipartite(n_groups, n_items, gv_edges, True)
    uu = SocialGraph(n_users, adjacency)
    groups = GroupTable([member_lists[g] for g in range(n_groups)])
    return Dataset(uv, gv, uu, groups, user_ids, item_ids, group_ids)


def load_dataset_dir(directory, id_maps=None):
    """load_dataset with the conventional file names inside one directory."""
    return load_dataset(
        os.path.join(directory, "user_item.tsv"),
        os.path.join(directory, "group_item.tsv"),
        os.path.join(directory, "groups.tsv"),
        os.path.join(directory, "social.tsv"),
        id_maps=id_maps,
    )


def bipartite_from_edges(left_count, right_count, edges):
    """In-memory graph from (left, item, weight) or (left, item, weight, ts)
    tuples; duplicates merge by weight sum keeping the earliest timestamp."""
    merged = {}
    with_ts = False
    for edge in edges:
        left, item, weight = edge[0], edge[1], float(edge[2])
        if weight <= 0:
            raise DataError(f"edge weight must be > 0, got {weight}")
        ts = -1
        if len(edge) == 4:
            ts = int(edge[3])
            with_ts = True
        entry = merged.get((left, item))
        if entry is None:
            merged[(left, item)] = [weight, ts]
        else:
            entry[0] += weight
            if ts >= 0 and (entry[1] < 0 or ts < entry[1]):
                entry[1] = ts
    return _build_bipartite(left_count, right_count, merged, with_ts)


def social_from_edges(user_count, pairs):
    """In-memory undirected social graph from (u, v) pairs."""
    adjacency_sets = [set() for _ in range(user_count)]
    for u, v in pairs:
        if u != v:
            adjacency_sets[u].add(v)
            adjacency_sets[v].add(u)
    return SocialGraph(user_count,
                       [np.array(sorted(s), dtype=np.int64) for s in adjacency_sets])


def make_dataset(uv, gv, uu, groups):
    """Bundle in-memory graphs into a Dataset with identity id maps."""
    user_ids = IdMap({str(i): i for i in range(uu.user_count)})
    item_ids = IdMap({str(i): i for i in range(uv.right_count)})
    group_ids = IdMap({str(i): i for i in range(groups.group_count)})
    return Dataset(uv, gv, uu, groups, user_ids, item_ids, group_ids)


def empirical_distribution(graph: BipartiteGraph, left_id):
    """Probability of each incident item: edge weight over node out-degree.

    Returns (item_ids, probabilities) aligned with the node's adjacency.
    """
    items, weights = graph.left_adjacency[left_id]
    total = weights.sum()
    if total <= 0:
        raise DataError(f"left node {left_id} has zero out-degree")
    return items, weights / total
