"""Dense-tensor reverse-mode differentiation engine.

Values are numpy arrays wrapped in :class:`Tensor`; every primitive records
its inputs and a backward closure, and ``backward()`` walks the graph in
reverse topological order.  Training runs in float32; gradient checking
re-runs the same graph in float64 (see :mod:`tncse.gradcheck`).
"""

from __future__ import annotations

import zlib

import numpy as np


class Tensor:
    """A dense array with optional participation in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_backward_ran")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- graph traversal ---------------------------------------------------

    def _toposort(self):
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        return order

    def backward(self):
        """Accumulate gradients of this scalar into every reachable node."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        if self._backward_ran:
            raise RuntimeError("backward() already ran on this graph; "
                               "re-run the forward pass before differentiating again")
        self._backward_ran = True
        order = self._toposort()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64)
                  if not isinstance(x, np.ndarray) else x)


def _needs_graph(*ts):
    return any(t.requires_grad or t._parents for t in ts)


def _node(data, parents, backward_fn):
    if _needs_graph(*parents):
        return Tensor(data, _parents=tuple(parents), _backward_fn=backward_fn)
    return Tensor(data)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape))
                 if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise primitives ------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                         _unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def scale(a, c):
    """Multiply by a python scalar constant (no gradient w.r.t. ``c``)."""
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g / (2.0 * out),))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero strictly outside the interval."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
    return _node(out, (a,), lambda g: (g * inside,))


# -- shape and reduction primitives ---------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, key):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _node(a.data[key], (a,), bw)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _node(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra --------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        bt = np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else b.data[None, :]
        at = np.swapaxes(a.data, -1, -2) if a.data.ndim > 1 else a.data[None, :]
        ga = np.matmul(g, bt) if g.ndim > 1 or b.data.ndim > 1 else np.outer(g, b.data)
        gb = np.matmul(at, g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _node(out, (a, b), bw)


def embedding(table, ids):
    """Row gather from ``table`` by an integer id array; scatter-add backward."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding id out of range for table of {table.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _node(table.data[ids], (table,), bw)


# -- neural-net primitives -------------------------------------------------

def softmax(a, axis=-1, temperature=1.0, additive_mask=None):
    """Temperature-scaled softmax; ``additive_mask`` is added to the logits."""
    a = as_tensor(a)
    z = a.data / temperature
    if additive_mask is not None:
        z = z + additive_mask
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        gs = g * out
        return ((gs - out * gs.sum(axis=axis, keepdims=True)) / temperature,)

    return _node(out, (a,), bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Zero-mean unit-variance normalization over the last axis, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if d < 2:
        raise ValueError(f"layer_norm needs a feature dimension >= 2, got {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        gh = g * gamma.data
        dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgamma, dbeta)

    return _node(out, (x, gamma, beta), bw)


def dropout(x, p, rng):
    """Inverted dropout driven by a named, seeded generator stream.

    The survivor mask is drawn from ``rng`` and captured by the backward
    closure, so replaying with the stream at the same position reproduces
    the forward output exactly.
    """
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    s = 1.0 / (1.0 - p)
    return _node(x.data * keep * s, (x,), lambda g: (g * keep * s,))


# -- vector geometry -------------------------------------------------------

def l2_norm(a, axis=None, eps=0.0):
    """Euclidean norm sqrt(sum(x^2) + eps); eps > 0 smooths the origin."""
    a = as_tensor(a)
    return sqrt(sum_(mul(a, a), axis=axis) + np.asarray(eps, dtype=a.dtype))


def cosine_sim(a, b):
    """Cosine of two vectors, clamped to [-1, 1] against rounding."""
    a, b = as_tensor(a), as_tensor(b)
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_sim is undefined for a zero-norm input")
    return clip(div(sum_(mul(a, b)), mul(l2_norm(a), l2_norm(b))), -1.0, 1.0)


def rowwise_cosine(a, b):
    """Per-row cosine of two equally-shaped matrices, clamped to [-1, 1]."""
    a, b = as_tensor(a), as_tensor(b)
    for m in (a, b):
        if np.any(np.linalg.norm(m.data, axis=-1) == 0.0):
            raise ValueError("rowwise_cosine is undefined for a zero-norm row")
    num = sum_(mul(a, b), axis=-1)
    den = mul(l2_norm(a, axis=-1), l2_norm(b, axis=-1))
    return clip(div(num, den), -1.0, 1.0)


# -- seeded named streams --------------------------------------------------

class RngStreams:
    """Named, independently-seeded numpy generator streams.

    Each name maps deterministically to its own stream, so e.g. the
    (encoder, pass-index) dropout streams decorrelate but replay exactly
    from the root seed.
    """

    def __init__(self, root_seed):
        self.root_seed = int(root_seed)
        self._gens = {}

    def get(self, name):
        gen = self._gens.get(name)
        if gen is None:
            key = zlib.crc32(name.encode("utf-8"))
            gen = np.random.default_rng(np.random.SeedSequence([self.root_seed, key]))
            self._gens[name] = gen
        return gen

    def reset(self):
        self._gens.clear()
