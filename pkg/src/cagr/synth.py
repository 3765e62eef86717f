"""Synthetic dataset generator with planted cluster structure.

Users, items, and groups live in clusters; user-item and social edges are
dense inside a cluster and sparse across. Each group draws its items from
its own cluster and its members individually co-attend those items, so a
correct model can recover the held-out test interaction from member
preferences. Timestamps are laid out so the 80th-percentile temporal
split holds out exactly one interaction per group.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

TRAIN_TS_LOW = 10_000
TRAIN_TS_HIGH = 50_000
TEST_TS_BASE = 100_000


@dataclass
class SynthSpec:
    clusters: int = 2
    users_per_cluster: int = 50
    items_per_cluster: int = 40
    p_in: float = 0.2
    p_out: float = 0.01
    n_groups: int = 60
    group_size_min: int = 4
    group_size_max: int = 4
    train_interactions_per_group: int = 4
    social_p_in: float = 0.15
    social_p_out: float = 0.005
    member_attendance: float = 1.0
    attendance_weight: float = 2.0
    cold_user_fraction: float = 0.1
    seed: int = 7

    def validate(self):
        if self.clusters < 1 or self.users_per_cluster < 2 or self.items_per_cluster < 1:
            raise ValueError("spec would yield an empty or degenerate graph")
        for name in ("p_in", "p_out", "social_p_in", "social_p_out",
                     "member_attendance", "cold_user_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.p_in <= self.p_out:
            raise ValueError("in-cluster interaction probability must exceed cross-cluster")
        if self.social_p_in <= self.social_p_out:
            raise ValueError("in-cluster social probability must exceed cross-cluster")
        if self.n_groups < 1:
            raise ValueError("at least one group required")
        if not 1 <= self.group_size_min <= self.group_size_max <= self.users_per_cluster:
            raise ValueError("bad group size range")
        # the 80th-percentile cut can hold out exactly one interaction per
        # group only when train records are at least 4x the test records
        if self.train_interactions_per_group < 4:
            raise ValueError("need >= 4 train interactions per group for an 80/20 holdout")
        if self.train_interactions_per_group + 1 > self.items_per_cluster:
            raise ValueError("more interactions per group than items in its cluster")

    @property
    def n_users(self):
        return self.clusters * self.users_per_cluster

    @property
    def n_items(self):
        return self.clusters * self.items_per_cluster


def generate(spec: SynthSpec, out_dir):
    """Write user_item.tsv, group_item.tsv, groups.tsv, social.tsv.

    Deterministic given spec.seed: identical specs produce byte-identical
    files. Returns the four file paths.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_users, n_items = spec.n_users, spec.n_items
    upc, ipc = spec.users_per_cluster, spec.items_per_cluster

    cold = rng.random(n_users) < spec.cold_user_fraction

    # background user-item edges, weight 1
    user_cluster = np.arange(n_users) // upc
    item_cluster = np.arange(n_items) // ipc
    probs = np.where(user_cluster[:, None] == item_cluster[None, :],
                     spec.p_in, spec.p_out)
    hits = rng.random((n_users, n_items)) < probs
    hits[cold] = False
    uv_weights = {}
    for u, i in zip(*np.nonzero(hits)):
        uv_weights[(int(u), int(i))] = 1.0

    # social graph: random in/cross-cluster edges plus a within-cluster ring
    # so every user has at least one tie
    pair_probs = np.where(user_cluster[:, None] == user_cluster[None, :],
                          spec.social_p_in, spec.social_p_out)
    draws = rng.random((n_users, n_users))
    social = set()
    for u, v in zip(*np.nonzero(draws < pair_probs)):
        if u < v:
            social.add((int(u), int(v)))
    for c in range(spec.clusters):
        base = c * upc
        for j in range(upc):
            u, v = base + j, base + (j + 1) % upc
            if u != v:
                social.add((min(u, v), max(u, v)))

    # groups: cluster-balanced, members drawn within one cluster
    group_members = []
    group_items = []
    for g in range(spec.n_groups):
        c = g % spec.clusters
        size = int(rng.integers(spec.group_size_min, spec.group_size_max + 1))
        members = rng.choice(upc, size=size, replace=False) + c * upc
        items = rng.choice(ipc, size=spec.train_interactions_per_group + 1,
                           replace=False) + c * ipc
        group_members.append(np.sort(members))
        group_items.append(items)

    # members individually co-attend their group's items (weight boosted);
    # cold members never do
    for g in range(spec.n_groups):
        for u in group_members[g]:
            if cold[u]:
                continue
            for i in group_items[g]:
                if rng.random() < spec.member_attendance:
                    key = (int(u), int(i))
                    uv_weights[key] = uv_weights.get(key, 0.0) + spec.attendance_weight

    # timestamps: all train interactions strictly before all test ones, with
    # enough ties at the top of train that the 80th-percentile cutoff keeps
    # every train record on the train side
    k = spec.train_interactions_per_group
    n_train = spec.n_groups * k
    n_total = spec.n_groups * (k + 1)
    boundary = math.ceil(0.8 * n_total)
    n_low = min(boundary - 1, n_train - 1)
    train_ts = np.full(n_train, TRAIN_TS_HIGH, dtype=np.int64)
    low_positions = rng.choice(n_train, size=n_low, replace=False)
    train_ts[low_positions] = rng.integers(TRAIN_TS_LOW, TRAIN_TS_HIGH,
                                           size=n_low)

    gv_rows = []
    ts_idx = 0
    for g in range(spec.n_groups):
        for i in group_items[g][:k]:
            gv_rows.append((g, int(i), int(train_ts[ts_idx])))
            ts_idx += 1
        test_item = int(group_items[g][k])
        gv_rows.append((g, test_item, TEST_TS_BASE + g))

    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name + ".tsv")
             for name in ("user_item", "group_item", "groups", "social")}

    with open(paths["user_item"], "w", encoding="utf-8") as fh:
        fh.write("# user\titem\tweight\n")
        for (u, i) in sorted(uv_weights):
            fh.write(f"u{u}\ti{i}\t{uv_weights[(u, i)]:g}\n")

    with open(paths["group_item"], "w", encoding="utf-8") as fh:
        fh.write("# group\titem\ttimestamp\n")
        for g, i, ts in gv_rows:
            fh.write(f"g{g}\ti{i}\t{ts}\n")

    with open(paths["groups"], "w", encoding="utf-8") as fh:
        fh.write("# group\tmembers\n")
        for g, members in enumerate(group_members):
            fh.write(f"g{g}\t" + ",".join(f"u{u}" for u in members) + "\n")

    with open(paths["social"], "w", encoding="utf-8") as fh:
        fh.write("# user\tuser\n")
        for u, v in sorted(social):
            fh.write(f"u{u}\tu{v}\n")

    return paths
