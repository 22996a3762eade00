"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` whenever one of their
inputs requires a gradient. Outside a ``with Tape():`` block nothing is
recorded, which doubles as the inference mode.

Storage is float32. ``precision("f64")`` switches newly created tensors to
float64; it exists for gradient checking only.
"""
import contextlib
import itertools
import math

import numpy as np

_uids = itertools.count(1)
_default_dtype = np.float32
_active_tape = None

KINDS = (
    "add", "sub", "mul_elem", "matmul", "relu", "gelu", "softmax_lastdim",
    "log_softmax_lastdim", "concat_lastdim", "concat", "mean_axis", "sum",
    "transpose2d", "permute", "reshape", "scale", "log", "exp", "layer_norm",
    "normalize_lastdim", "index",
)


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


@contextlib.contextmanager
def precision(name):
    """Temporarily change the dtype of newly created tensors ('f32' or 'f64')."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = {"f32": np.float32, "f64": np.float64}[name]
    try:
        yield
    finally:
        _default_dtype = prev


def default_dtype():
    return _default_dtype


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "grad", "tape", "__weakref__")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype != _default_dtype:
            arr = arr.astype(_default_dtype)
        self._init(arr, requires_grad)

    def _init(self, arr, requires_grad):
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_uids)
        self.grad = None
        self.tape = None

    @classmethod
    def wrap(cls, arr, requires_grad=False):
        """Wrap an ndarray without dtype conversion."""
        t = cls.__new__(cls)
        t._init(arr, requires_grad)
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose2d(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis):
        return mean_axis(self, axis)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    # Inputs produced on the same tape are kept by id only, so records never
    # point back at tensors that point at the tape.
    __slots__ = ("kind", "in_ids", "leaves", "out_id", "fn")

    def __init__(self, kind, in_ids, leaves, out_id, fn):
        self.kind = kind
        self.in_ids = in_ids
        self.leaves = leaves
        self.out_id = out_id
        self.fn = fn


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; tapes nest, the innermost is active. A tape must
    only be driven from one thread.
    """

    def __init__(self):
        self.records = []
        self._outputs = set()
        self._prev = None

    def __enter__(self):
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._prev
        return False

    def __len__(self):
        return len(self.records)

    def record(self, kind, inputs, out, fn):
        out.requires_grad = True
        out.tape = self
        in_ids = tuple(t.node_id if t.requires_grad else None for t in inputs)
        leaves = tuple(t if t.requires_grad and t.node_id not in self._outputs else None
                       for t in inputs)
        self.records.append(_Record(kind, in_ids, leaves, out.node_id, fn))
        self._outputs.add(out.node_id)

    def backward(self, loss):
        """Backpropagate from scalar ``loss``.

        Returns a dict mapping every reachable requires-grad leaf's node_id to
        its gradient Tensor; the same array is stored on ``leaf.grad``.
        """
        if loss.size != 1 or loss.ndim > 1:
            raise TapeError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
        if loss.tape is not self:
            raise TapeError("loss was not produced on this tape")
        grads = {loss.node_id: np.ones_like(loss.data)}
        leaves = {}
        for rec in reversed(self.records):
            g = grads.pop(rec.out_id, None)
            if g is None:
                continue
            in_grads = rec.fn(g)
            for uid, leaf, gi in zip(rec.in_ids, rec.leaves, in_grads):
                if gi is None or uid is None:
                    continue
                if leaf is not None:
                    leaves[uid] = leaf
                prev = grads.get(uid)
                grads[uid] = gi if prev is None else prev + gi
        result = {}
        for uid, t in leaves.items():
            g = grads[uid]
            if g.shape != t.shape:
                g = g.reshape(t.shape)
            t.grad = g
            result[uid] = Tensor.wrap(g)
        return result


def backward(loss):
    """Backpropagate through the tape that produced ``loss``."""
    if loss.tape is None:
        raise TapeError("backward called on a tensor that is not on any tape")
    return loss.tape.backward(loss)


def active_tape():
    return _active_tape


def _emit(kind, inputs, out_data, fn):
    out = Tensor.wrap(out_data)
    tape = _active_tape
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, inputs, out, fn)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_elementwise(kind, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    # bias-add pattern: one shape is a trailing suffix of the other
    short, long_ = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise ShapeError(f"{kind}: incompatible shapes {list(sa)} and {list(sb)}")


# ---------------------------------------------------------------- elementwise

def add(a, b):
    _check_elementwise("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    _check_elementwise("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    _check_elementwise("mul_elem", a, b)
    ad, bd = a.data, b.data
    return _emit("mul_elem", (a, b), ad * bd,
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c):
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a):
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0).astype(a.data.dtype, copy=False),
                 lambda g: (g * mask,))


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Tanh approximation of GELU."""
    x = a.data
    t = np.tanh(_GELU_K * (x + 0.044715 * (x * x * x)))
    out = 0.5 * x * (1.0 + t)

    def fn(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return _emit("gelu", (a,), out, fn)


def log(a):
    x = a.data
    return _emit("log", (a,), np.log(x), lambda g: (g / x,))


def exp(a):
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


# ---------------------------------------------------------------- reductions

def softmax(a):
    """Softmax over the last axis (max-subtracted)."""
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ShapeError(f"softmax_lastdim: empty last dimension in shape {list(a.shape)}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax_lastdim", (a,), s,
                 lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def log_softmax(a):
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ShapeError(f"log_softmax_lastdim: empty last dimension in shape {list(a.shape)}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    return _emit("log_softmax_lastdim", (a,), out,
                 lambda g: (g - np.exp(out) * g.sum(axis=-1, keepdims=True),))


def tsum(a, axis=None):
    shape = a.shape
    if axis is None:
        out = np.asarray(a.data.sum())
        return _emit("sum", (a,), out, lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", (a,), out, fn)


def mean_axis(a, axis, order_invariant=False):
    """Mean over ``axis``.

    With ``order_invariant`` the values are sorted along the axis before
    summing, so any permutation of the input gives a bitwise-equal result.
    """
    shape = a.shape
    n = shape[axis]
    if order_invariant:
        out = np.sort(a.data, axis=axis).sum(axis=axis) / n
    else:
        out = a.data.mean(axis=axis)

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _emit("mean_axis", (a,), out, fn)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Matrix product; leading batch dims follow numpy broadcasting."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {list(a.shape)} and {list(b.shape)}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {list(a.shape)} and {list(b.shape)}") from None
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def fn(g):
        ga = gb = None
        if need_a:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if need_b:
            if bd.ndim == 2 and ad.ndim > 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _emit("matmul", (a, b), out, fn)


def transpose2d(a):
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose2d: need rank >= 2, got shape {list(a.shape)}")
    return _emit("transpose2d", (a,), np.swapaxes(a.data, -1, -2),
                 lambda g: (np.swapaxes(g, -1, -2),))


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("permute", (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inv),))


def reshape(a, shape):
    shape = tuple(shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {list(old)} as {list(shape)}") from None
    return _emit("reshape", (a,), out, lambda g: (g.reshape(old),))


def concat(tensors, axis=-1):
    tensors = list(tensors)
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            i != ax and x != y for i, (x, y) in enumerate(zip(t.shape, tensors[0].shape))
        ):
            raise ShapeError(
                f"concat: incompatible shapes {list(tensors[0].shape)} and {list(t.shape)}")
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    splits = np.cumsum(sizes)[:-1]
    kind = "concat_lastdim" if ax == tensors[0].ndim - 1 else "concat"
    return _emit(kind, tuple(tensors), out, lambda g: tuple(np.split(g, splits, axis=ax)))


def concat_lastdim(tensors):
    return concat(tensors, axis=-1)


def _is_basic_key(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in parts)


def index(a, key):
    """``a[key]`` with basic or integer-array indexing."""
    shape, dtype = a.shape, a.data.dtype
    out = a.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=dtype)

    basic = _is_basic_key(key)

    def fn(g):
        z = np.zeros(shape, dtype=g.dtype)
        if basic:
            z[key] = g
        else:
            np.add.at(z, key, g)
        return (z,)

    return _emit("index", (a,), out, fn)


# ---------------------------------------------------------------- fused ops

def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: incompatible shapes {list(x.shape)} and {list(gamma.shape)}")
    # statistics in float64: with few features xhat sits near +-1 and the
    # backward terms cancel almost exactly
    dt = x.data.dtype
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    xc = x64 - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data.astype(np.float64)
    out = (xhat * gd + beta.data).astype(dt)

    def fn(g):
        g = g.astype(np.float64)
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return (dx.astype(dt), (g * xhat).sum(axis=lead).astype(gamma.data.dtype),
                g.sum(axis=lead).astype(beta.data.dtype))

    return _emit("layer_norm", (x, gamma, beta), out, fn)


def normalize(a):
    """Scale rows (last axis) to unit L2 norm."""
    n = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(n == 0):
        raise ValueError("normalize_lastdim: zero-norm row")
    y = a.data / n
    return _emit("normalize_lastdim", (a,), y,
                 lambda g: ((g - y * (g * y).sum(axis=-1, keepdims=True)) / n,))


_DISPATCH = {
    "add": add, "sub": sub, "mul_elem": mul, "matmul": matmul, "relu": relu,
    "gelu": gelu, "softmax_lastdim": softmax, "log_softmax_lastdim": log_softmax,
    "concat_lastdim": lambda *ts: concat(ts, -1), "transpose2d": transpose2d,
    "log": log, "exp": exp, "normalize_lastdim": normalize,
}


def forward_op(kind, inputs, **kwargs):
    """Apply op ``kind`` to ``inputs`` by name.

    Ops taking a non-tensor argument get it via keyword: ``mean_axis`` /
    ``sum`` take ``axis``, ``scale`` takes ``factor``, ``reshape`` takes
    ``shape``, ``permute`` takes ``axes``, ``index`` takes ``key``.
    """
    inputs = list(inputs)
    if kind in _DISPATCH:
        return _DISPATCH[kind](*inputs, **kwargs)
    if kind == "mean_axis":
        return mean_axis(inputs[0], kwargs["axis"], kwargs.get("order_invariant", False))
    if kind == "sum":
        return tsum(inputs[0], kwargs.get("axis"))
    if kind == "scale":
        return scale(inputs[0], kwargs["factor"])
    if kind == "reshape":
        return reshape(inputs[0], kwargs["shape"])
    if kind == "permute":
        return permute(inputs[0], kwargs["axes"])
    if kind == "concat":
        return concat(inputs, kwargs.get("axis", -1))
    if kind == "index":
        return index(inputs[0], kwargs["key"])
    if kind == "layer_norm":
        return layer_norm(*inputs, **kwargs)
    raise ValueError(f"unknown op kind {kind!r}")


def grad_check(f, x, eps=1e-3, dtype="f64", coords=None):
    """Largest relative error between tape and central-difference gradients.

    The tape gradient is computed in ``dtype``; the finite-difference oracle
    always runs in float64. ``coords`` optionally restricts the comparison to
    a list of flat indices. Returns ``inf`` if any evaluation is not finite.
    """
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    with precision(dtype):
        xt = Tensor(base, requires_grad=True)
        with Tape() as tape:
            y = f(xt)
        if not np.all(np.isfinite(y.data)):
            return math.inf
        tape.backward(y)
        analytic = (xt.grad if xt.grad is not None else np.zeros_like(xt.data))
        analytic = analytic.astype(np.float64).reshape(-1)
    if coords is None:
        coords = range(base.size)
    worst = 0.0
    with precision("f64"):
        for i in coords:
            xp = base.copy().reshape(-1)
            xm = xp.copy()
            xp[i] += eps
            xm[i] -= eps
            fp = f(Tensor(xp.reshape(base.shape))).item()
            fm = f(Tensor(xm.reshape(base.shape))).item()
            numeric = (fp - fm) / (2 * eps)
            a = analytic[i]
            if not (np.isfinite(numeric) and np.isfinite(a)):
                return math.inf
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
