"""Centrality-aware user representations.

Per centrality view, one neighborhood convolution over the top-ranked
neighbors produces a unit-norm view-specific vector; the views are fused
by a softmax over trainable view feature vectors. Forward passes cache
the intermediates the manual backward pass needs.
"""

from __future__ import annotations

import numpy as np

from .graphs import SocialGraph
from .params import GradBuffer, ModelState


def receptive_fields(uu: SocialGraph, view_names, n_neighbors):
    """Top-n_neighbors neighbor ids per (view, user), from the view rankings.

    Static during training: rankings depend only on the graph and the
    centrality scores.
    """
    fields = []
    for name in view_names:
        try:
            ranked = uu.views[name]
        except KeyError:
            raise ValueError(f"social graph has no view {name!r}; run build_views first") from None
        fields.append([nbrs[:n_neighbors] for nbrs in ranked])
    return fields


class ViewCache:
    __slots__ = ("view", "user", "nbrs", "U_n", "pre1", "h_vec", "u_i",
                 "pre2", "act2", "norm", "out")


class UserCache:
    __slots__ = ("user", "view_caches", "outs", "u_concat", "alpha")


def convolve_view(state: ModelState, view, user, nbrs, pooling="mean"):
    """One view's convolution for one user; returns (unit vector, cache).

    Neighbor embeddings pass through Relu(P u + p) and are pooled; the pool
    is concatenated with the user's own embedding, transformed through
    Relu(W . + w), and L2-normalized. Users with no neighbors pool to the
    zero vector.
    """
    cache = ViewCache()
    cache.view = view
    cache.user = user
    cache.nbrs = nbrs
    u_i = state.user_base[user]
    cache.u_i = u_i
    d = state.d
    if len(nbrs):
        U_n = state.user_base[nbrs]
        pre1 = U_n @ state.conv_P[view].T + state.conv_p[view]
        act1 = np.maximum(pre1, 0.0)
        h_vec = act1.mean(axis=0) if pooling == "mean" else act1.sum(axis=0)
        cache.U_n = U_n
        cache.pre1 = pre1
    else:
        h_vec = np.zeros(d, dtype=state.dtype)
        cache.U_n = None
        cache.pre1 = None
    cache.h_vec = h_vec
    W = state.conv_W[view]
    pre2 = W[:, :d] @ u_i + W[:, d:] @ h_vec + state.conv_w[view]
    act2 = np.maximum(pre2, 0.0)
    norm = float(np.linalg.norm(act2))
    out = act2 / norm if norm > 0 else act2
    cache.pre2 = pre2
    cache.act2 = act2
    cache.norm = norm
    cache.out = out
    return out, cache


def convolve_view_backward(state: ModelState, cache: ViewCache, grad_out,
                           grads: GradBuffer, pooling="mean"):
    """Accumulate gradients for one view's convolution of one user."""
    d = state.d
    k = cache.view
    if cache.norm > 0:
        g2 = (grad_out - (grad_out @ cache.out) * cache.out) / cache.norm
    else:
        g2 = grad_out
    dpre2 = np.where(cache.pre2 > 0, g2, 0.0)
    dW = grads.get("conv_W")[k]
    dW[:, :d] += np.outer(dpre2, cache.u_i)
    dW[:, d:] += np.outer(dpre2, cache.h_vec)
    grads.get("conv_w")[k] += dpre2
    W = state.conv_W[k]
    grads.add_user(cache.user, W[:, :d].T @ dpre2)
    if cache.U_n is not None:
        dh = W[:, d:].T @ dpre2
        if pooling == "mean":
            dh = dh / len(cache.nbrs)
        dact1 = np.where(cache.pre1 > 0, dh, 0.0)
        grads.get("conv_P")[k] += dact1.T @ cache.U_n
        grads.get("conv_p")[k] += dact1.sum(axis=0)
        dU_n = dact1 @ state.conv_P[k]
        for t, nid in enumerate(cache.nbrs):
            grads.add_user(int(nid), dU_n[t])


def fuse_views(state: ModelState, outs):
    """Softmax-weighted combination of the per-view vectors.

    outs: (n_views, d) stacked view outputs for one user.
    Returns (fused vector, view weights alpha).
    """
    u_concat = outs.reshape(-1)
    scores = state.view_z @ u_concat
    scores = scores - scores.max()
    exp = np.exp(scores)
    alpha = exp / exp.sum()
    fused = alpha @ outs
    return fused, alpha, u_concat


def fuse_views_backward(state: ModelState, outs, alpha, u_concat, grad_fused,
                        grads: GradBuffer):
    """Returns per-view output gradients (n_views, d)."""
    n_views = len(alpha)
    dalpha = outs @ grad_fused
    douts = alpha[:, None] * grad_fused[None, :]
    dscores = alpha * (dalpha - alpha @ dalpha)
    grads.get("view_z")[...] += np.outer(dscores, u_concat)
    douts += (dscores @ state.view_z).reshape(n_views, -1)
    return douts


def user_forward(state: ModelState, fields, user, pooling="mean"):
    """Centrality-aware representation of one user: convolve every view,
    fuse. Returns (vector, cache)."""
    cache = UserCache()
    cache.user = user
    cache.view_caches = []
    outs = np.empty((len(fields), state.d), dtype=state.dtype)
    for k, per_user in enumerate(fields):
        out, vc = convolve_view(state, k, user, per_user[user], pooling)
        outs[k] = out
        cache.view_caches.append(vc)
    fused, alpha, u_concat = fuse_views(state, outs)
    cache.outs = outs
    cache.u_concat = u_concat
    cache.alpha = alpha
    return fused, cache


def user_backward(state: ModelState, cache: UserCache, grad_fused,
                  grads: GradBuffer, pooling="mean"):
    douts = fuse_views_backward(state, cache.outs, cache.alpha, cache.u_concat,
                                grad_fused, grads)
    for k, vc in enumerate(cache.view_caches):
        convolve_view_backward(state, vc, douts[k], grads, pooling)
