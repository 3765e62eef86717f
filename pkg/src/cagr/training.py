"""Negative-sampling SGD over the interaction graphs.

Three procedures share one step machinery:
  st   group-item steps only
  tst  a user-item stage, then a group-item stage continuing from the
       learned embeddings with every parameter fine-tuned
  jt   every iteration flips a Bernoulli(1/(1+eta)) coin between the
       group-item and user-item graphs

Each step draws one positive edge and m negatives, computes the logistic
loss and its exact gradients through the full forward pass (convolution,
view fusion, self-attention), and applies one SGD update with the linear
decay schedule lr_t = lr0 * max(1 - t/N, 1e-4).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import attention, centrality, convolution, params, sampling
from .errors import NumericError
from .graphs import Dataset

LR_FLOOR = 1e-4
ALL_VIEWS = ("pagerank", "eigenvector", "closeness", "betweenness")


@dataclass
class TrainingConfig:
    mode: str = "jt"                       # st | tst | jt
    d: int = 128
    h: int = 16
    m_negatives: int = 6
    n_iterations: int = 4_000_000
    eta: float = 1.0
    gamma: float = 1.0
    lr0: float = 0.025
    n_neighbors: int = 4
    views: tuple = ALL_VIEWS
    neg_sampler: str = "group_aware"       # classic | group_aware
    members: str = "fused"                 # fused | base
    pooling: str = "mean"                  # mean | sum
    scale: str = "paper"                   # paper | per_head
    seed: int = 1
    workers: int = 1
    debug: bool = False
    trace_every: int = 1
    n_stage1: int | None = None            # tst stage budgets; default n_iterations
    n_stage2: int | None = None

    def validate(self):
        if self.mode not in ("st", "tst", "jt"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.d % self.h != 0:
            raise ValueError(f"d={self.d} not divisible by h={self.h}")
        if self.m_negatives < 1:
            raise ValueError("at least one negative sample per positive is required")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.lr0 < 0:
            raise ValueError("lr0 must be >= 0")
        if self.neg_sampler not in ("classic", "group_aware"):
            raise ValueError(f"unknown neg_sampler {self.neg_sampler!r}")
        if self.members not in ("fused", "base"):
            raise ValueError(f"unknown members mode {self.members!r}")
        if self.pooling not in ("mean", "sum"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.scale not in ("paper", "per_head"):
            raise ValueError(f"unknown scale mode {self.scale!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for v in self.views:
            if v not in ALL_VIEWS:
                raise ValueError(f"unknown centrality view {v!r}")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


def log_sigmoid(x):
    return -np.log1p(np.exp(-np.clip(x, -30.0, 30.0)))


@dataclass
class LossTrace:
    """Per-step losses; graph codes: 0 = group-item, 1 = user-item."""

    steps: np.ndarray
    graphs: np.ndarray
    losses: np.ndarray

    def moving_average(self, window):
        if len(self.losses) == 0:
            return np.zeros(0)
        kernel = np.ones(window) / window
        padded = np.concatenate([np.full(window - 1, self.losses[0]), self.losses])
        return np.convolve(padded, kernel, mode="valid")


@dataclass
class TrainResult:
    state: params.ModelState
    trace: LossTrace
    uv_steps: int = 0
    gv_steps: int = 0


class TrainContext:
    """Everything a training or evaluation forward pass needs besides the
    parameters: graphs, receptive fields, and sampler tables."""

    def __init__(self, dataset: Dataset, config: TrainingConfig, gv=None):
        config.validate()
        self.dataset = dataset
        self.config = config
        self.state = None
        self.uv = dataset.uv
        self.gv = gv if gv is not None else dataset.gv
        self.groups = dataset.groups
        if config.views:
            missing = [v for v in config.views if v not in dataset.uu.views]
            if missing:
                scores = centrality.compute_measures(dataset.uu, missing)
                centrality.build_views(dataset.uu, scores)
            self.fields = convolution.receptive_fields(
                dataset.uu, config.views, config.n_neighbors)
        else:
            self.fields = None
        self.member_arrays = dataset.groups.members

    def user_vector(self, user):
        """Centrality-aware vector when views are configured, else the base
        embedding. Returns (vector, cache-or-None)."""
        if self.fields is None:
            return self.state.user_base[user], None
        return convolution.user_forward(self.state, self.fields, user,
                                        self.config.pooling)

    def member_vector(self, user):
        if self.fields is None or self.config.members == "base":
            return self.state.user_base[user], None
        return convolution.user_forward(self.state, self.fields, user,
                                        self.config.pooling)

    def group_vector(self, members):
        """Group embedding plus the caches backward needs."""
        X = np.empty((len(members), self.state.d), dtype=self.state.dtype)
        member_caches = []
        for i, uid in enumerate(members):
            vec, cache = self.member_vector(int(uid))
            X[i] = vec
            member_caches.append(cache)
        gcache = attention.group_forward(self.state, X, self.config.scale)
        return gcache.g_vec, gcache, member_caches


def _logistic_terms(vec, pos_item, negatives, item_emb, grads):
    """Shared positive-plus-negatives logistic loss.

    Returns (loss, gradient wrt vec); item gradients go into grads.
    """
    v_pos = item_emb[pos_item]
    x = float(vec @ v_pos)
    s = sigmoid(x)
    loss = -log_sigmoid(x)
    coeff = s - 1.0
    dvec = coeff * v_pos
    grads.add_item(int(pos_item), coeff * vec)
    for k in negatives:
        v_k = item_emb[k]
        xk = float(vec @ v_k)
        sk = sigmoid(xk)
        loss -= log_sigmoid(-xk)
        dvec += sk * v_k
        grads.add_item(int(k), sk * vec)
    return loss, dvec


def loss_sgv_step(ctx: TrainContext, group, pos_item, negatives):
    """Loss and gradients for one group-item positive and its negatives.

    Gradients flow to the item embeddings, attention and pooling
    parameters, convolution parameters, view vectors, and the base
    embeddings of the members and their sampled neighbors.
    """
    state = ctx.state
    members = ctx.member_arrays[group]
    g_vec, gcache, member_caches = ctx.group_vector(members)
    grads = params.GradBuffer(state)
    loss, dg = _logistic_terms(g_vec, pos_item, negatives, state.item_emb, grads)
    dX = attention.group_backward(state, gcache, dg, grads)
    for i, uid in enumerate(members):
        if member_caches[i] is None:
            grads.add_user(int(uid), dX[i])
        else:
            convolution.user_backward(state, member_caches[i], dX[i], grads,
                                      ctx.config.pooling)
    return loss, grads


def loss_uv_step(ctx: TrainContext, user, pos_item, negatives):
    """Loss and gradients for one user-item positive and its negatives,
    scored with the centrality-aware user vector."""
    state = ctx.state
    vec, cache = ctx.user_vector(user)
    grads = params.GradBuffer(state)
    loss, dvec = _logistic_terms(vec, pos_item, negatives, state.item_emb, grads)
    if cache is None:
        grads.add_user(int(user), dvec)
    else:
        convolution.user_backward(state, cache, dvec, grads, ctx.config.pooling)
    return loss, grads


class _StepMachine:
    """Sampler bundle for one worker's stream of SGD steps."""

    def __init__(self, ctx: TrainContext, rng):
        cfg = ctx.config
        self.ctx = ctx
        self.rng = rng
        self.gv_edges = sampling.EdgeSampler(ctx.gv) if ctx.gv.edge_count else None
        self.uv_edges = sampling.EdgeSampler(ctx.uv) if ctx.uv.edge_count else None
        self.uv_noise = sampling.classic_noise(ctx.uv)
        if cfg.neg_sampler == "classic":
            self.gv_noise = sampling.classic_noise(ctx.gv)
            self.group_cache = None
        else:
            self.gv_noise = None
            self.group_cache = sampling.GroupAwareCache(ctx.uv, cfg.gamma)

    def gv_step(self):
        group, pos = self.gv_edges.draw(self.rng)
        if self.group_cache is not None:
            table = self.group_cache.table(group, self.ctx.member_arrays[group])
        else:
            table = self.gv_noise
        negatives = sampling.sample_negatives(table, pos,
                                              self.ctx.config.m_negatives, self.rng)
        return loss_sgv_step(self.ctx, group, pos, negatives)

    def uv_step(self):
        user, pos = self.uv_edges.draw(self.rng)
        negatives = sampling.sample_negatives(self.uv_noise, pos,
                                              self.ctx.config.m_negatives, self.rng)
        return loss_uv_step(self.ctx, user, pos, negatives)


def _run_steps(ctx, machine, n_steps, branch_of, trace_rows, counters,
               offset=0, record=True):
    """One worker's loop. branch_of(t, rng) returns 'gv' or 'uv'."""
    cfg = ctx.config
    state = ctx.state
    lr0 = cfg.lr0
    inv_n = 1.0 / n_steps
    for t in range(n_steps):
        lr = lr0 * max(1.0 - t * inv_n, LR_FLOOR)
        branch = branch_of(t, machine.rng)
        if branch == "gv":
            loss, grads = machine.gv_step()
            counters[0] += 1
        else:
            loss, grads = machine.uv_step()
            counters[1] += 1
        grads.apply_sgd(state, lr)
        if cfg.debug and not state.all_finite():
            raise NumericError(f"non-finite parameter detected at iteration {offset + t}")
        if record and t % cfg.trace_every == 0:
            trace_rows.append((offset + t, 0 if branch == "gv" else 1, loss))


def _make_branch_fn(ctx, stage):
    cfg = ctx.config
    if stage == "gv":
        return lambda t, rng: "gv"
    if stage == "uv":
        return lambda t, rng: "uv"
    if cfg.eta == 0.0:
        return lambda t, rng: "gv"
    p_gv = 1.0 / (1.0 + cfg.eta)
    return lambda t, rng: "gv" if rng.random() < p_gv else "uv"


def _train_stage(ctx, stage, n_steps, seed, trace_rows, counters, offset, workers):
    branch_of = _make_branch_fn(ctx, stage)
    if workers == 1:
        machine = _StepMachine(ctx, np.random.default_rng(seed))
        _run_steps(ctx, machine, n_steps, branch_of, trace_rows, counters, offset)
        return
    # Lock-free mode: workers share the state and tolerate lost updates.
    # No determinism or trace guarantees; only worker 0 records.
    per_worker = [n_steps // workers] * workers
    per_worker[0] += n_steps - sum(per_worker)
    threads = []
    for wid in range(workers):
        machine = _StepMachine(ctx, np.random.default_rng(seed + wid))
        threads.append(threading.Thread(
            target=_run_steps,
            args=(ctx, machine, per_worker[wid], branch_of, trace_rows,
                  counters, offset, wid == 0),
        ))
    for th in threads:
        th.start()
    for th in threads:
        th.join()


def train(dataset: Dataset, config: TrainingConfig, gv=None,
          initial_state=None) -> TrainResult:
    """Run the configured optimization procedure and return the final state
    plus the loss trace.

    gv overrides the group-item graph (pass the temporal-split training
    graph here). Single-worker runs are bit-reproducible given the seed.
    """
    config.validate()
    ctx = TrainContext(dataset, config, gv=gv)
    if initial_state is not None:
        ctx.state = initial_state
    else:
        ctx.state = params.init(dataset.uv.left_count, dataset.uv.right_count,
                                config.d, config.h, len(config.views), config.seed)
    trace_rows = []
    counters = [0, 0]  # gv, uv
    if config.mode == "st":
        _train_stage(ctx, "gv", config.n_iterations, config.seed + 1,
                     trace_rows, counters, 0, config.workers)
    elif config.mode == "tst":
        n1 = config.n_stage1 or config.n_iterations
        n2 = config.n_stage2 or config.n_iterations
        _train_stage(ctx, "uv", n1, config.seed + 1, trace_rows, counters,
                     0, config.workers)
        _train_stage(ctx, "gv", n2, config.seed + 2, trace_rows, counters,
                     n1, config.workers)
    else:
        _train_stage(ctx, "jt", config.n_iterations, config.seed + 1,
                     trace_rows, counters, 0, config.workers)
    if not ctx.state.all_finite():
        raise NumericError("non-finite parameter after training")
    steps = np.array([r[0] for r in trace_rows], dtype=np.int64)
    graphs = np.array([r[1] for r in trace_rows], dtype=np.uint8)
    losses = np.array([r[2] for r in trace_rows], dtype=np.float64)
    trace = LossTrace(steps, graphs, losses)
    return TrainResult(ctx.state, trace, uv_steps=counters[1], gv_steps=counters[0])


def make_eval_context(dataset: Dataset, config: TrainingConfig,
                      state: params.ModelState, gv=None) -> TrainContext:
    """Context for scoring with an existing state (no sampler setup cost)."""
    ctx = TrainContext(dataset, config, gv=gv)
    ctx.state = state
    return ctx
