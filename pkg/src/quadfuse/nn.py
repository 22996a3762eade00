"""Neural building blocks: parameter registry, linear layers, layer norm,
multi-head self-attention and dropout."""
import math
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ModelParams:
    """Named registry of trainable tensors. Names are unique."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def prefixed(self, prefix):
        return [n for n in self._params if n.startswith(prefix)]

    def count(self):
        return sum(t.size for t in self._params.values())

    def state_dict(self):
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state, strict=True):
        if strict and set(state) != set(self._params):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise KeyError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            t = self._params[name]
            if tuple(arr.shape) != t.shape:
                raise ValueError(f"{name}: shape {list(arr.shape)} != {list(t.shape)}")
            t.data = np.asarray(arr, dtype=np.float32).copy()


def glorot_uniform(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class LinearLayer:
    """``y = x @ W + b`` with W of shape [in_dim, out_dim]."""

    def __init__(self, params, name, in_dim, out_dim, rng, bias=True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = params.add(f"{name}.W", glorot_uniform(rng, in_dim, out_dim))
        self.b = params.add(f"{name}.b", np.zeros(out_dim)) if bias else None

    def __call__(self, x):
        return linear_forward(self, x)


def linear_forward(layer, x):
    if x.shape[-1] != layer.in_dim:
        raise ad.ShapeError(
            f"linear: incompatible shapes {list(x.shape)} and {list(layer.W.shape)}")
    squeeze = x.ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, layer.in_dim))
    y = ad.matmul(x, layer.W)
    if layer.b is not None:
        y = ad.add(y, layer.b)
    if squeeze:
        y = ad.reshape(y, (layer.out_dim,))
    return y


class LayerNorm:
    def __init__(self, params, name, dim, eps=1e-5):
        self.gamma = params.add(f"{name}.gamma", np.ones(dim))
        self.beta = params.add(f"{name}.beta", np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


def layer_norm(x, gamma, beta, eps=1e-5):
    return ad.layer_norm(x, gamma, beta, eps)


def dropout(x, p, rng, training):
    """Inverted dropout; the identity (same object) at inference or p == 0."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = rng.uniform(size=x.shape) >= p
    mask = keep.astype(x.data.dtype) * (1.0 / (1.0 - p))
    return ad.mul(x, Tensor.wrap(mask.astype(x.data.dtype)))


class MhaBlock:
    """Multi-head scaled dot-product self-attention over [..., T, d_model]."""

    def __init__(self, params, name, d_model, n_heads, rng):
        if n_heads < 1 or d_model % n_heads:
            raise ValueError(f"d_model {d_model} is not divisible by n_heads {n_heads}")
        self.d_model, self.n_heads = d_model, n_heads
        self.head_dim = d_model // n_heads
        self.q = LinearLayer(params, f"{name}.q", d_model, d_model, rng)
        self.k = LinearLayer(params, f"{name}.k", d_model, d_model, rng)
        self.v = LinearLayer(params, f"{name}.v", d_model, d_model, rng)
        self.o = LinearLayer(params, f"{name}.o", d_model, d_model, rng)

    def __call__(self, x, rng=None, dropout_p=0.0, training=False):
        return mha_forward(self, x, rng, dropout_p, training)


def mha_forward(block, x, rng=None, dropout_p=0.0, training=False):
    """Return ``(out, attn)``; attn has shape [..., n_heads, T, T]."""
    if x.ndim < 2 or x.shape[-1] != block.d_model:
        raise ad.ShapeError(
            f"mha: incompatible shapes {list(x.shape)} and d_model {block.d_model}")
    *lead, T, d = x.shape
    h, hd = block.n_heads, block.head_dim
    nl = len(lead)
    split = tuple(lead) + (T, h, hd)
    perm = tuple(range(nl)) + (nl + 1, nl, nl + 2)

    def heads(t):
        return ad.permute(ad.reshape(t, split), perm)

    q = ad.scale(heads(block.q(x)), 1.0 / math.sqrt(hd))
    k = heads(block.k(x))
    v = heads(block.v(x))
    scores = ad.matmul(q, ad.transpose2d(k))
    attn = ad.softmax(scores)
    weights = dropout(attn, dropout_p, rng, training) if dropout_p else attn
    ctx = ad.matmul(weights, v)
    ctx = ad.reshape(ad.permute(ctx, perm), tuple(lead) + (T, d))
    return block.o(ctx), attn
