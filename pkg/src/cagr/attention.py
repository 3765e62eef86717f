"""Group representations from member vectors.

Multi-head scaled dot-product self-attention over the member matrix,
followed by a tanh feed-forward layer and attention pooling down to a
single group vector. The softmax scale is 1/sqrt(d) with the model
dimension d (scale_mode="paper"); scale_mode="per_head" uses the head
width d/h instead. Baseline aggregators (mean, fixed weights) live here
too for comparison runs.
"""

from __future__ import annotations

import numpy as np

from .params import GradBuffer, ModelState


def attention_scale(state: ModelState, scale_mode="paper"):
    """The denominator constant used inside the attention softmax."""
    return float(state.d) if scale_mode == "paper" else state.d / state.h


def _softmax_rows(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


class GroupCache:
    __slots__ = ("members", "X", "Q", "K", "V", "A", "C", "O",
                 "a_mat", "lam", "g_vec", "inv_scale")

    @property
    def attention_weights(self):
        """Per-head row-stochastic attention matrices, shape (h, n, n)."""
        return self.A

    @property
    def pooling_weights(self):
        return self.lam


def group_forward(state: ModelState, member_matrix, scale_mode="paper") -> GroupCache:
    """Aggregate member vectors (rows of member_matrix) into one group vector.

    Per head: softmax(Q K^T / sqrt(scale)) V with Q=K=V=member matrix under
    that head's projections; heads are concatenated and projected; each row
    passes through tanh(Ws . + bs); softmax pooling against the context
    vector gives the member weights lambda and the group vector.
    """
    X = np.asarray(member_matrix)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot aggregate an empty group")
    h, d = state.h, state.d
    dh = d // h
    cache = GroupCache()
    cache.X = X
    cache.inv_scale = 1.0 / np.sqrt(attention_scale(state, scale_mode))
    Q = np.empty((h, n, dh), dtype=state.dtype)
    K = np.empty_like(Q)
    V = np.empty_like(Q)
    A = np.empty((h, n, n), dtype=state.dtype)
    C = np.empty((n, d), dtype=state.dtype)
    for t in range(h):
        Q[t] = X @ state.att_WQ[t]
        K[t] = X @ state.att_WK[t]
        V[t] = X @ state.att_WV[t]
        A[t] = _softmax_rows((Q[t] @ K[t].T) * cache.inv_scale)
        C[:, t * dh:(t + 1) * dh] = A[t] @ V[t]
    O = C @ state.att_WO
    a_mat = np.tanh(O @ state.pool_Ws.T + state.pool_bs)
    e = a_mat @ state.pool_as
    e = e - e.max()
    exp = np.exp(e)
    lam = exp / exp.sum()
    cache.Q, cache.K, cache.V, cache.A = Q, K, V, A
    cache.C, cache.O, cache.a_mat, cache.lam = C, O, a_mat, lam
    cache.g_vec = lam @ a_mat
    return cache


def group_backward(state: ModelState, cache: GroupCache, grad_g,
                   grads: GradBuffer):
    """Backward through pooling, the tanh layer, and every attention head.

    Returns the gradient with respect to the member matrix, shape (n, d).
    """
    h, d = state.h, state.d
    dh = d // h
    a_mat, lam = cache.a_mat, cache.lam

    dlam = a_mat @ grad_g
    da_mat = lam[:, None] * grad_g[None, :]
    de = lam * (dlam - lam @ dlam)
    grads.get("pool_as")[...] += a_mat.T @ de
    da_mat += de[:, None] * state.pool_as[None, :]

    dpre = da_mat * (1.0 - a_mat * a_mat)
    grads.get("pool_Ws")[...] += dpre.T @ cache.O
    grads.get("pool_bs")[...] += dpre.sum(axis=0)
    dO = dpre @ state.pool_Ws

    grads.get("att_WO")[...] += cache.C.T @ dO
    dC = dO @ state.att_WO.T

    X = cache.X
    dX = np.zeros_like(X)
    dWQ = grads.get("att_WQ")
    dWK = grads.get("att_WK")
    dWV = grads.get("att_WV")
    for t in range(h):
        A, Q, K, V = cache.A[t], cache.Q[t], cache.K[t], cache.V[t]
        dM = dC[:, t * dh:(t + 1) * dh]
        dA = dM @ V.T
        dV = A.T @ dM
        dS = A * (dA - (dA * A).sum(axis=1, keepdims=True))
        dS *= cache.inv_scale
        dQ = dS @ K
        dK = dS.T @ Q
        dWQ[t] += X.T @ dQ
        dWK[t] += X.T @ dK
        dWV[t] += X.T @ dV
        dX += dQ @ state.att_WQ[t].T
        dX += dK @ state.att_WK[t].T
        dX += dV @ state.att_WV[t].T
    return dX


def baseline_aggregate(member_matrix, strategy="mean", weights=None):
    """Predefined aggregation over member vectors.

    mean: unweighted average. weighted: supplied nonnegative weights,
    normalized to sum 1 before use.
    """
    X = np.asarray(member_matrix)
    if strategy == "mean":
        return X.mean(axis=0)
    if strategy == "weighted":
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (X.shape[0],):
            raise ValueError("one weight per member required")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must not all be zero")
        return (w / total) @ X
    raise ValueError(f"unknown aggregation strategy {strategy!r}")
