"""A small dense tensor with reverse-mode automatic differentiation.

Each op computes its forward value eagerly with numpy (or a fused kernel) and,
when gradients are enabled and an input requires them, records a closure that
maps the output gradient to input gradients. ``Tensor.backward`` walks the
recorded graph once in reverse topological order.

float32 is the default precision; use ``precision("float64")`` for gradient
checks.
"""
import contextlib
import math

import numpy as np

from . import kernels
from .errors import ShapeError

_DTYPES = {"float32": np.float32, "float64": np.float64}

_default_dtype = np.float32
_grad_enabled = True
_softmax_log = None


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    _default_dtype = _resolve_dtype(dtype)


def _resolve_dtype(dtype):
    if isinstance(dtype, str):
        try:
            return _DTYPES[dtype]
        except KeyError:
            raise ValueError(f"unsupported precision {dtype!r}") from None
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype!r}")
    return dtype


@contextlib.contextmanager
def precision(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def record_softmax():
    """Collect every softmax output (and its mask) produced inside the block."""
    global _softmax_log
    prev = _softmax_log
    _softmax_log = log = []
    try:
        yield log
    finally:
        _softmax_log = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=_resolve_dtype(dtype))
        else:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- autodiff -----------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ShapeError("loss does not depend on any tensor that requires grad")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None

    # -- operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

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

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


def _topological_order(root):
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data, parents, backward, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out.op = op
    return out


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _binary(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _binary(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _binary(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _binary(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "div")


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x):
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def softplus(x):
    out = np.logaddexp(0, x.data).astype(x.dtype)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


def square(x):
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


# -- reductions and shape ---------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = math.prod(x.shape[a] for a in axes)
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x, shape):
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(x, a, b):
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def getitem(x, idx):
    if isinstance(idx, Tensor):
        idx = idx.data
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (int, slice, np.integer)) for p in parts)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(data, tuple(tensors), backward, "stack")


def scatter_rows(src, index, n):
    """Rows of ``src`` summed into a zero tensor of ``n`` rows at ``index``."""
    out = np.zeros((n,) + src.shape[1:], dtype=src.dtype)
    np.add.at(out, index, src.data)
    return _make(out, (src,), lambda g: (g[index],), "scatter_rows")


# -- linear algebra ----------------------------------------------------------------

def matmul(a, b):
    a, b = _binary(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` laid out as [in, out]."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- normalized maps ------------------------------------------------------------

def _to_rows(arr, axis):
    moved = np.moveaxis(arr, axis, -1)
    return np.ascontiguousarray(moved.reshape(-1, moved.shape[-1])), moved.shape


def _from_rows(rows, moved_shape, axis):
    return np.moveaxis(rows.reshape(moved_shape), -1, axis)


def softmax(x, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    if x.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    if not np.isfinite(x.data).all():
        raise ShapeError("softmax input contains non-finite values")
    rows, moved = _to_rows(x.data, axis)
    mrows = None
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        mrows, _ = _to_rows(m, axis)
        if not mrows.any(axis=1).all():
            raise ShapeError("softmax row is fully masked; distribution undefined")
    y_rows = kernels.softmax_fwd(rows, mrows)
    out = _from_rows(y_rows, moved, axis)
    if _softmax_log is not None:
        _softmax_log.append((out, None if mask is None else _from_rows(mrows, moved, axis)))

    def backward(g):
        g_rows, _ = _to_rows(g, axis)
        return (_from_rows(kernels.softmax_bwd(y_rows, g_rows), moved, axis),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x, axis=-1):
    if not np.isfinite(x.data).all():
        raise ShapeError("log_softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must be ({d},), got {gamma.shape}, {beta.shape}")
    rows = np.ascontiguousarray(x.data.reshape(-1, d))
    y, xhat, rstd = kernels.layer_norm_fwd(rows, gamma.data, beta.data, x.dtype.type(eps))

    def backward(g):
        gx, ggamma, gbeta = kernels.layer_norm_bwd(
            np.ascontiguousarray(g.reshape(-1, d)), xhat, rstd, gamma.data)
        return gx.reshape(x.shape), ggamma, gbeta

    return _make(y.reshape(x.shape), (x, gamma, beta), backward, "layer_norm")


# -- recurrent cell -------------------------------------------------------------

def lstm_cell(pre, c_prev):
    """Fused LSTM nonlinearity. Returns [h, c] concatenated on the last axis."""
    H = c_prev.shape[-1]
    if pre.shape[-1] != 4 * H or pre.shape[:-1] != c_prev.shape[:-1]:
        raise ShapeError(f"lstm_cell: pre-activations {pre.shape} vs cell {c_prev.shape}")
    lead = c_prev.shape[:-1]
    p2 = np.ascontiguousarray(pre.data.reshape(-1, 4 * H))
    c2 = np.ascontiguousarray(c_prev.data.reshape(-1, H))
    hc, acts = kernels.lstm_cell_fwd(p2, c2)

    def backward(g):
        gpre, gc = kernels.lstm_cell_bwd(np.ascontiguousarray(g.reshape(-1, 2 * H)), acts, c2)
        return gpre.reshape(pre.shape), gc.reshape(c_prev.shape)

    return _make(hc.reshape(lead + (2 * H,)), (pre, c_prev), backward, "lstm_cell")


def lstm_step(x, state, params):
    """One LSTM step. ``params`` = (W_ih [d_in, 4H], W_hh [H, 4H], b [4H])."""
    h, c = state
    w_ih, w_hh, b = params
    H = w_hh.shape[0]
    if w_ih.shape[-1] != 4 * H or w_hh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm params inconsistent: {w_ih.shape}, {w_hh.shape}, {b.shape}")
    if x.shape[-1] != w_ih.shape[0] or h.shape[-1] != H or c.shape[-1] != H:
        raise ShapeError(f"lstm inputs {x.shape}/{h.shape}/{c.shape} vs params d_in={w_ih.shape[0]}, H={H}")
    squeeze = x.ndim == 1
    if squeeze:
        x, h, c = reshape(x, (1, -1)), reshape(h, (1, -1)), reshape(c, (1, -1))
    pre = matmul(x, w_ih) + matmul(h, w_hh) + b
    hc = lstm_cell(pre, c)
    h2, c2 = hc[..., :H], hc[..., H:]
    if squeeze:
        h2, c2 = reshape(h2, (H,)), reshape(c2, (H,))
    return h2, c2


# -- attention -------------------------------------------------------------------

def scaled_dot_attention(q, k, v, mask=None):
    """softmax(q kᵀ / √d) v. ``mask`` (True = attend) broadcasts to [..., n_q, n_k].

    Returns ``(output, weights)``.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention key/value lengths differ: {k.shape} vs {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = matmul(q, swapaxes(k, -1, -2)) * scale
    w = softmax(logits, axis=-1, mask=mask)
    return matmul(w, v), w


# -- stochastic -------------------------------------------------------------------

def dropout(x, p, rng, training):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return mul(x, Tensor(keep))
