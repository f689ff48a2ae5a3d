"""Small define-by-run reverse-mode autodiff over numpy arrays.

Shapes are explicit: elementwise ops need equal shapes, with one exception,
adding a vector of size ``x.shape[-1]`` (a bias) to every row of ``x``.
Matmul takes either a weight matrix ``(..., m) @ (m, p)`` or a same-batch
pair ``(B, n, m) @ (B, m, p)``.
"""
from __future__ import annotations

import contextlib
import struct

import numpy as np

_recording = True


class NonFiniteError(ValueError):
    """A NaN reached an op that cannot produce a meaningful result from it."""


@contextlib.contextmanager
def no_grad():
    """Run ops without recording them on the tape."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op", "_released")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self._op = "leaf"
        self._released = False

    # -- introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- backward --------------------------------------------------------

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every requires-grad leaf.

        The recorded graph is released afterwards; a second call raises.
        """
        if self._released:
            raise RuntimeError("backward called twice on the same graph; re-run the forward pass")
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")
        if seed is None:
            if self.data.size != 1:
                raise ValueError("seed is required for non-scalar outputs")
            seed = np.ones_like(self.data)
        seed = np.asarray(seed, dtype=self.dtype)
        if seed.shape != self.shape:
            raise ValueError(f"seed shape {seed.shape} != output shape {self.shape}")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        for node in order:
            if node._vjp is not None:
                node._parents = ()
                node._vjp = None
                node._released = True


def _make(data, parents, vjp, op):
    out = Tensor(data)
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def zeros(shape, dtype=np.float64, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def constant(shape, value, dtype=np.float64, requires_grad=False):
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _sum_to_bias(g, size):
    return g.reshape(-1, size).sum(axis=0)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]
        return _make(a.data + b.data, (a, b), lambda g: (g, _sum_to_bias(g, n)), "add_bias")
    raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    if a.shape != b.shape:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x, c):
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x):
    """tanh-approximated GELU."""
    u = x.data
    t = np.tanh(_GELU_C * (u + 0.044715 * u**3))
    out = 0.5 * u * (1.0 + t)

    def vjp(g):
        du = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
        return (g * du,)

    return _make(out, (x,), vjp, "gelu")


def dropout(x, p, rng=None, train=True):
    """Inverted dropout; identity when ``p == 0`` or outside training."""
    if not train or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout rate must be < 1")
    if rng is None:
        raise ValueError("dropout in train mode needs a seeded generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def matmul(a, b):
    if b.ndim == 2:
        if a.shape[-1] != b.shape[0]:
            raise ValueError(f"matmul: inner dims {a.shape} @ {b.shape}")
        m = b.shape[0]

        def vjp(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, m).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return _make(a.data @ b.data, (a, b), vjp, "matmul")
    if a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ValueError(f"bmm: incompatible shapes {a.shape} @ {b.shape}")

        def vjp(g):
            return g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g

        return _make(a.data @ b.data, (a, b), vjp, "bmm")
    raise ValueError(f"matmul: unsupported shapes {a.shape} @ {b.shape}")


def transpose(x):
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ValueError("transpose needs at least 2 axes")
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), vjp, "concat")


def concat_last_axis(a, b):
    return concat([a, b], axis=-1)


def take(x, indices, axis=0):
    """``np.take`` with scatter-add backward (covers gather_rows and slicing)."""
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % x.ndim
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(np.moveaxis(out, ax, 0), idx, np.moveaxis(g, ax, 0))
        return (out,)

    return _make(np.take(x.data, idx, axis=ax), (x,), vjp, "take")


def gather_rows(x, rows):
    return take(x, rows, axis=0)


def mean(x, axis):
    n = x.shape[axis]
    shape = x.shape

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _make(x.data.mean(axis=axis), (x,), vjp, "mean")


def mean_rows(x):
    return mean(x, axis=-2)


def sum_all(x):
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, g, dtype=x.dtype),), "sum")


# ---------------------------------------------------------------------------
# normalisation / attention primitives
# ---------------------------------------------------------------------------


def softmax(x, mask=None):
    """Softmax over the last axis; ``mask`` is an additive constant (e.g. -1e9)."""
    z = x.data if mask is None else x.data + mask
    if np.isnan(z).any():
        raise NonFiniteError("softmax input contains NaN")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), vjp, "softmax")


softmax_rows = softmax


def layer_norm(x, gain, bias, eps=1e-5):
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError("layer_norm: gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx = g * gain.data
        dx = inv * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, _sum_to_bias(g * xhat, d), _sum_to_bias(g, d)

    return _make(out, (x, gain, bias), vjp, "layer_norm")


def log_softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy_with_logits(logits, labels):
    """Batch-mean negative log-likelihood of integer ``labels``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError("expected logits (B, C) and labels (B,)")
    C = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range [0, {C})")
    if np.isnan(logits.data).any():
        raise NonFiniteError("logits contain NaN")
    logp = log_softmax_np(logits.data)
    B = labels.shape[0]
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / B),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), vjp, "cross_entropy")


# ---------------------------------------------------------------------------
# named-tensor checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"RFT1"
CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_tensors(path, named):
    """Write ``{name: array}``: magic, version, count, then per tensor
    ``u16 name_len, name, u8 dtype(0=f32,1=f64), u8 rank, u32 dims, data``."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(named)))
        for name, arr in named.items():
            arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr)
            code = _CODES.get(arr.dtype, 0)
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def load_tensors(path):
    out = {}
    with open(path, "rb") as fh:
        magic, version, count = struct.unpack("<4sII", fh.read(12))
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(count):
            (n,) = struct.unpack("<H", fh.read(2))
            name = fh.read(n).decode()
            code, rank = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            dt = _DTYPES[code]
            size = int(np.prod(shape)) if rank else 1
            out[name] = np.frombuffer(fh.read(size * dt.itemsize), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    return out
