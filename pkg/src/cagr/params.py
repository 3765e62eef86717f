"""Trainable model state: allocation, initialization, and serialization.

Layout (all per-array shapes commented at the field):
embeddings are initialized uniform(-0.5/d, 0.5/d), dense-layer weights
Glorot-uniform, biases zero. Training runs in float32; the gradient-check
harness builds float64 copies of the same layout.

Model file format: 8-byte magic ``CAGRMODL``, then little-endian u32
fields version, d, h, n_views, n_users, n_items, followed by one record
per array: u32 name length, name bytes (utf-8), u32 element count, and
the element data as little-endian float32.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"CAGRMODL"
VERSION = 1

#: array name -> attribute, in serialization order
ARRAY_FIELDS = (
    "user_base",
    "item_emb",
    "conv_P",
    "conv_p",
    "conv_W",
    "conv_w",
    "view_z",
    "att_WQ",
    "att_WK",
    "att_WV",
    "att_WO",
    "pool_Ws",
    "pool_bs",
    "pool_as",
)


class ModelState:
    """Owns every trainable array.

    user_base : (n_users, d)       base user embeddings, pre-convolution
    item_emb  : (n_items, d)       item embeddings
    conv_P    : (n_views, d, d)    per-view neighbor transform
    conv_p    : (n_views, d)       its bias
    conv_W    : (n_views, d, 2d)   per-view concat transform
    conv_w    : (n_views, d)       its bias
    view_z    : (n_views, n_views*d)  view feature vectors
    att_WQ/WK/WV : (h, d, d//h)    per-head projections (bias-free)
    att_WO    : (d, d)             head-concat output projection
    pool_Ws   : (d, d), pool_bs : (d,), pool_as : (d,)  attention pooling
    """

    def __init__(self, n_users, n_items, d, h, n_views, dtype=np.float32):
        if d % h != 0:
            raise ValueError(f"embedding dimension {d} not divisible by head count {h}")
        self.n_users = n_users
        self.n_items = n_items
        self.d = d
        self.h = h
        self.n_views = n_views
        self.dtype = np.dtype(dtype)
        dh = d // h
        z = lambda *shape: np.zeros(shape, dtype=self.dtype)
        self.user_base = z(n_users, d)
        self.item_emb = z(n_items, d)
        self.conv_P = z(n_views, d, d)
        self.conv_p = z(n_views, d)
        self.conv_W = z(n_views, d, 2 * d)
        self.conv_w = z(n_views, d)
        self.view_z = z(n_views, n_views * d)
        self.att_WQ = z(h, d, dh)
        self.att_WK = z(h, d, dh)
        self.att_WV = z(h, d, dh)
        self.att_WO = z(d, d)
        self.pool_Ws = z(d, d)
        self.pool_bs = z(d)
        self.pool_as = z(d)

    def arrays(self):
        return {name: getattr(self, name) for name in ARRAY_FIELDS}

    def astype(self, dtype):
        out = ModelState(self.n_users, self.n_items, self.d, self.h, self.n_views, dtype)
        for name, arr in self.arrays().items():
            getattr(out, name)[...] = arr
        return out

    def copy(self):
        return self.astype(self.dtype)

    def all_finite(self):
        return all(np.isfinite(arr).all() for arr in self.arrays().values())

    def equals(self, other):
        if (self.n_users, self.n_items, self.d, self.h, self.n_views) != \
                (other.n_users, other.n_items, other.d, other.h, other.n_views):
            return False
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ARRAY_FIELDS)


class GradBuffer:
    """Per-step gradient accumulator mirroring ModelState's arrays.

    Dense parameter gradients are allocated lazily; embedding gradients are
    kept as sparse per-row dicts so a step only touches the rows it used.
    """

    __slots__ = ("state", "dense", "user_rows", "item_rows")

    def __init__(self, state: ModelState):
        self.state = state
        self.dense = {}
        self.user_rows = {}
        self.item_rows = {}

    def get(self, name):
        arr = self.dense.get(name)
        if arr is None:
            arr = np.zeros_like(getattr(self.state, name))
            self.dense[name] = arr
        return arr

    def _add_row(self, rows, idx, vec):
        row = rows.get(idx)
        if row is None:
            rows[idx] = vec.copy()
        else:
            row += vec

    def add_user(self, uid, vec):
        self._add_row(self.user_rows, uid, vec)

    def add_item(self, iid, vec):
        self._add_row(self.item_rows, iid, vec)

    def apply_sgd(self, state: ModelState, lr):
        for name, grad in self.dense.items():
            getattr(state, name)[...] -= lr * grad
        for uid, vec in self.user_rows.items():
            state.user_base[uid] -= lr * vec
        for iid, vec in self.item_rows.items():
            state.item_emb[iid] -= lr * vec

    def to_dense(self):
        """Full-shape gradient arrays for every parameter (gradient checks)."""
        out = {name: np.zeros_like(arr) for name, arr in self.state.arrays().items()}
        for name, grad in self.dense.items():
            out[name][...] = grad
        for uid, vec in self.user_rows.items():
            out["user_base"][uid] = vec
        for iid, vec in self.item_rows.items():
            out["item_emb"][iid] = vec
        return out


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init(n_users, n_items, d, h, n_views, seed, dtype=np.float32) -> ModelState:
    """Deterministic initialization given the seed.

    Embeddings small-uniform, dense layers Glorot-uniform, biases zero.
    Arrays are drawn in a fixed order so equal seeds give equal states.
    """
    state = ModelState(n_users, n_items, d, h, n_views, dtype)
    rng = np.random.default_rng(seed)
    scale = 0.5 / d
    state.user_base[...] = rng.uniform(-scale, scale, size=(n_users, d)).astype(dtype)
    state.item_emb[...] = rng.uniform(-scale, scale, size=(n_items, d)).astype(dtype)
    dh = d // h
    for k in range(n_views):
        state.conv_P[k] = _glorot(rng, (d, d), d, d, dtype)
        state.conv_W[k] = _glorot(rng, (d, 2 * d), 2 * d, d, dtype)
        state.view_z[k] = _glorot(rng, (n_views * d,), n_views * d, 1, dtype)
    for head in range(h):
        state.att_WQ[head] = _glorot(rng, (d, dh), d, dh, dtype)
        state.att_WK[head] = _glorot(rng, (d, dh), d, dh, dtype)
        state.att_WV[head] = _glorot(rng, (d, dh), d, dh, dtype)
    state.att_WO[...] = _glorot(rng, (d, d), d, d, dtype)
    state.pool_Ws[...] = _glorot(rng, (d, d), d, d, dtype)
    state.pool_as[...] = _glorot(rng, (d,), d, 1, dtype)
    # conv_p, conv_w, pool_bs stay zero
    return state


def save(state: ModelState, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<6I", VERSION, state.d, state.h, state.n_views,
                             state.n_users, state.n_items))
        for name, arr in state.arrays().items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.size))
            fh.write(data.tobytes())


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated model file")
    return data


def load(path, expect_d=None) -> ModelState:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, d, h, n_views, n_users, n_items = struct.unpack(
            "<6I", _read_exact(fh, 24, path))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported model version {version}")
        if expect_d is not None and d != expect_d:
            raise FormatError(f"{path}: model dimension {d} != configured {expect_d}")
        state = ModelState(n_users, n_items, d, h, n_views, dtype=np.float32)
        for name, arr in state.arrays().items():
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
            stored = _read_exact(fh, name_len, path).decode("utf-8")
            if stored != name:
                raise FormatError(f"{path}: expected array {name!r}, found {stored!r}")
            (count,) = struct.unpack("<I", _read_exact(fh, 4, path))
            if count != arr.size:
                raise FormatError(f"{path}: array {name!r} has {count} elements, "
                                  f"expected {arr.size}")
            flat = np.frombuffer(_read_exact(fh, 4 * count, path), dtype="<f4")
            arr[...] = flat.reshape(arr.shape)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after last array")
    return state
