"""Minimal reverse-mode autodiff over numpy arrays.

Every op builds a :class:`Tensor` that remembers its parents and a closure
producing the parents' gradients. ``backward`` walks the graph once in
reverse topological order. Only tensors that (transitively) depend on a
trainable leaf record a backward closure, so frozen sub-networks cost a
plain numpy forward pass.

Training runs in float32; ``precision(np.float64)`` switches newly created
constants and parameters cast with :meth:`Module.astype` to float64 for
finite-difference checking.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPE = np.float32
_CHECK_FINITE = True
_GRAD_ENABLED = True


class NumericError(FloatingPointError):
    """A non-finite value appeared in a forward pass."""


@contextlib.contextmanager
def precision(dtype):
    global _DTYPE
    old, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = old


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def finite_checks(enabled: bool):
    global _CHECK_FINITE
    old, _CHECK_FINITE = _CHECK_FINITE, enabled
    try:
        yield
    finally:
        _CHECK_FINITE = old


@contextlib.contextmanager
def no_grad():
    """Forward only: no backward closures are recorded."""
    global _GRAD_ENABLED
    old, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="const", name=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

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
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Parameter(Tensor):
    """A named, optionally trainable leaf."""

    __slots__ = ("trainable",)

    def __init__(self, data, name="", trainable=True):
        super().__init__(np.ascontiguousarray(data), requires_grad=trainable, op="param", name=name)
        self.trainable = trainable

    def freeze(self):
        self.trainable = False
        self.requires_grad = False
        self.grad = None

    def unfreeze(self):
        self.trainable = True
        self.requires_grad = True


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def _result(data, parents, backward_fn, op):
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by op '{op}'")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, grad=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every trainable leaf."""
    if root.data.size != 1 and grad is None:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones_like(root.data) if grad is None else grad}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node.backward_fn(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), bw, "div")


def power(a, k: float):
    a = as_tensor(a)
    return _result(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1),), "pow")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * a.data) + 1)
    return _result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,), "relu")


def clip(a, lo, hi):
    """Clamp values; gradient passes only where the value was not clamped."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def maximum_const(a, c: float):
    a = as_tensor(a)
    keep = a.data >= c
    return _result(np.where(keep, a.data, c).astype(a.dtype), (a,), lambda g: (g * keep,), "maximum")


def masked_fill(a, mask, value: float):
    """Replace entries where ``mask`` is true by a constant (zero gradient there)."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _result(np.where(mask, value, a.data).astype(a.dtype), (a,),
                   lambda g: (np.where(mask, 0, g).astype(g.dtype),), "masked_fill")


# ---------------------------------------------------------------------------
# reductions and shape


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx):
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(np.asarray(a.data[idx]), (a,), bw, "getitem")


def take_rows(a, idx):
    """``a[idx]`` along axis 0; backward via a one-hot matmul (fast with repeats)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        onehot = np.zeros((a.shape[0], idx.size), dtype=g.dtype)
        onehot[idx, np.arange(idx.size)] = 1
        return ((onehot @ g.reshape(idx.size, -1)).reshape(a.shape),)

    return _result(a.data[idx], (a,), bw, "take_rows")


def concat(tensors: Sequence, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def stack(tensors: Sequence, axis=0):
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in ts], axis=axis), ts, bw, "stack")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            bt = np.swapaxes(b.data, -1, -2) if b.ndim > 1 else b.data
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data)
            else:
                ga = _unbroadcast(g @ bt, a.shape) if a.ndim > 1 else (g[..., None, :] @ bt)[..., 0, :]
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            elif b.ndim == 1:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g[..., None], b.shape + (1,))[..., 0]
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, b=None):
    out = matmul(x, w)
    return out if b is None else add(out, b)


# ---------------------------------------------------------------------------
# probability


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    return _result(p, (a,), lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def softmax_cross_entropy(logits, labels):
    """Mean over rows of -log softmax(logits)[label]."""
    lp = log_softmax(logits, axis=-1)
    n = lp.shape[0]
    return mul(tsum(getitem(lp, (np.arange(n), np.asarray(labels)))), -1.0 / n)


# ---------------------------------------------------------------------------
# convolution and pooling (NCHW)


def conv2d(x, w, b=None, stride=1, padding=0):
    x, w = as_tensor(x), as_tensor(w)
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    cols = np.empty((n, cin, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, cin * kh * kw, ho * wo)
    wmat = w.data.reshape(cout, -1)
    out = wmat @ cols
    if b is not None:
        b = as_tensor(b)
        out += b.data[:, None]
    out = out.reshape(n, cout, ho, wo)

    def bw(g):
        g3 = g.reshape(n, cout, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = (wmat.T @ g3).reshape(n, cin, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
            gx = dxp[:, :, padding:padding + h, padding:padding + wd] if padding else dxp
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, bw, "conv2d")


def maxpool2d(x, k=2):
    """Non-overlapping k×k max pooling; trailing rows/cols that do not fill a window are dropped."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    xr = x.data[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
    xr = xr.reshape(n, c, ho, wo, k * k)
    arg = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gr = np.zeros((n, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(gr, arg[..., None], g[..., None], axis=-1)
        gr = gr.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        gx = np.zeros_like(x.data)
        gx[:, :, :ho * k, :wo * k] = gr
        return (gx,)

    return _result(out, (x,), bw, "maxpool2d")


def upsample_nearest(x, k=2):
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, k, axis=2), k, axis=3)
    return _result(out, (x,), lambda g: (g.reshape(n, c, h, k, w, k).sum(axis=(3, 5)),), "upsample")


def interp_matrix(n_in: int, n_out: int, start: float = None, stop: float = None, dtype=None) -> np.ndarray:
    """Row-stochastic (n_out, n_in) linear-interpolation matrix.

    Sample points run from ``start`` to ``stop`` (inclusive, in input index
    units); the default spans pixel centres for an n_in -> n_out resize.
    """
    dtype = dtype or _DTYPE
    if start is None:
        scale = n_in / n_out
        pos = (np.arange(n_out) + 0.5) * scale - 0.5
    else:
        pos = np.linspace(start, stop, n_out) if n_out > 1 else np.array([(start + stop) / 2])
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


# ---------------------------------------------------------------------------
# modules


class Module:
    """Container whose Parameter / Module attributes form a named tree."""

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = path
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    yield from m.named_parameters(f"{path}.{i}.")
            elif isinstance(val, dict) and val and isinstance(next(iter(val.values())), Module):
                for k, m in val.items():
                    yield from m.named_parameters(f"{path}.{k}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        for p in self.parameters():
            p.freeze()

    def unfreeze(self):
        for p in self.parameters():
            p.unfreeze()

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


RELU_GAIN = float(np.sqrt(2.0))


def init_uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    """U(-b, b) with b = gain * sqrt(3 / fan_in); gain sqrt(2) keeps ReLU stacks at unit scale."""
    bound = gain * np.sqrt(3.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(_DTYPE)


class Linear(Module):
    def __init__(self, rng, n_in, n_out, bias=True):
        self.weight = Parameter(init_uniform(rng, (n_in, n_out), n_in, RELU_GAIN))
        self.bias = Parameter(np.zeros(n_out, dtype=_DTYPE)) if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, k, stride=1, padding=0):
        self.weight = Parameter(init_uniform(rng, (c_out, c_in, k, k), c_in * k * k, RELU_GAIN))
        self.bias = Parameter(np.zeros(c_out, dtype=_DTYPE))
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Embedding(Module):
    def __init__(self, rng, n, dim):
        self.weight = Parameter(rng.normal(0, 1.0 / np.sqrt(dim), size=(n, dim)).astype(_DTYPE))

    def __call__(self, idx):
        return take_rows(self.weight, idx)


class GRUCell(Module):
    """Gated recurrent cell, gates ordered (reset, update, candidate)."""

    def __init__(self, rng, n_in, hidden):
        self.hidden = hidden
        self.w_in = Parameter(init_uniform(rng, (n_in, 3 * hidden), hidden))
        self.w_hid = Parameter(init_uniform(rng, (hidden, 3 * hidden), hidden))
        self.b_in = Parameter(np.zeros(3 * hidden, dtype=_DTYPE))
        self.b_hid = Parameter(np.zeros(3 * hidden, dtype=_DTYPE))

    @staticmethod
    def count(n_in, hidden):
        return 3 * hidden * (n_in + hidden) + 6 * hidden

    def __call__(self, x, h):
        hsz = self.hidden
        gx = linear(x, self.w_in, self.b_in)
        gh = linear(h, self.w_hid, self.b_hid)
        r = sigmoid(gx[:, :hsz] + gh[:, :hsz])
        z = sigmoid(gx[:, hsz:2 * hsz] + gh[:, hsz:2 * hsz])
        n = tanh(gx[:, 2 * hsz:] + r * gh[:, 2 * hsz:])
        return n + z * (h - n)


class AdditiveAttention(Module):
    """score_p = v · tanh(W_k k_p + W_q q); returns (context, weights)."""

    def __init__(self, rng, key_dim, query_dim, width):
        self.w_key = Parameter(init_uniform(rng, (key_dim, width), key_dim))
        self.b_key = Parameter(np.zeros(width, dtype=_DTYPE))
        self.w_query = Parameter(init_uniform(rng, (query_dim, width), query_dim))
        self.v = Parameter(init_uniform(rng, (width,), width))

    @staticmethod
    def count(key_dim, query_dim, width):
        return key_dim * width + width + query_dim * width + width

    def project_keys(self, keys):
        return linear(keys, self.w_key, self.b_key)

    def __call__(self, keys, projected_keys, query, mask=None):
        # keys (N, P, D), projected_keys (N, P, A), query (N, Q)
        q = matmul(query, self.w_query)
        n, a = q.shape
        e = tanh(projected_keys + reshape(q, (n, 1, a)))
        scores = matmul(e, self.v)
        if mask is not None:
            scores = masked_fill(scores, ~mask, -1e4)
        alpha = softmax(scores, axis=1)
        ctx = matmul(reshape(alpha, (n, 1, -1)), keys)
        return reshape(ctx, (n, keys.shape[2])), alpha


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradReport:
    errors: dict[str, float] = field(default_factory=dict)
    worst: str = ""
    finite: bool = True

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], step: float = 1e-6,
               max_entries: int = 40, rng: np.random.Generator | None = None,
               floor: float = 1e-4) -> GradReport:
    """Compare analytic gradients against central differences.

    Relative error per entry is |a - n| / max(|a|, |n|, floor); the floor
    keeps entries whose true gradient is ~0 from dominating through
    round-off. At most ``max_entries`` random entries per parameter are probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = rng or np.random.default_rng(0)
    report = GradReport()
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        report.finite = False
        return report
    backward(loss)
    for i, p in enumerate(params):
        name = p.name or f"param{i}"
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        n = flat.size
        probe = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        worst = 0.0
        for j in probe:
            orig = flat[j]
            flat[j] = orig + step
            fp = float(loss_fn().data)
            flat[j] = orig - step
            fm = float(loss_fn().data)
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                report.finite = False
                return report
            num = (fp - fm) / (2 * step)
            a = float(analytic.reshape(-1)[j])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
        report.errors[name] = worst
    report.worst = max(report.errors, key=report.errors.get) if report.errors else ""
    for p in params:
        p.grad = None
    return report
