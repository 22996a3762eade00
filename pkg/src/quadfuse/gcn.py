"""Quadrant graph: split, normalized adjacency, two-layer GCN, mean pooling."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import dropout, glorot_uniform

QUADRANTS = ("UL", "UR", "LL", "LR")


def resize_matrix(n_in, n_out):
    """[n_out, n_in] bilinear interpolation matrix (half-pixel centres, edge clamp)."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * ratio - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        frac = src - i0
        i1 = min(i0 + 1, n_in - 1)
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def quadrant_operators(size):
    """Row/column operators so that quadrant q = L[q] @ image @ R[q]."""
    if size % 2:
        raise ValueError(f"quadrant split needs an even image size, got {size}")
    half = size // 2
    up = resize_matrix(half, size)
    top = np.zeros((size, size))
    top[:, :half] = up
    bottom = np.zeros((size, size))
    bottom[:, half:] = up
    # (row op, column op) for UL, UR, LL, LR
    rows = [top, top, bottom, bottom]
    cols = [top.T, bottom.T, top.T, bottom.T]
    return rows, cols


def split_quadrants(image):
    """Crop [..., C, S, S] into UL, UR, LL, LR halves and resize each back to S.

    Returns a tensor [..., 4, C, S, S]; differentiable in the image.
    """
    size = image.shape[-1]
    if image.shape[-2] != size:
        raise ad.ShapeError(f"split_quadrants: image must be square, got {list(image.shape)}")
    rows, cols = quadrant_operators(size)
    dt = image.data.dtype
    lead = image.shape[:-3]
    quads = []
    for r, c in zip(rows, cols):
        q = ad.matmul(ad.matmul(Tensor.wrap(r.astype(dt)), image), Tensor.wrap(c.astype(dt)))
        quads.append(ad.reshape(q, lead + (1,) + image.shape[-3:]))
    return ad.concat(quads, axis=len(lead))


def build_adjacency(n_nodes):
    """D^-1/2 (A + I) D^-1/2 for the complete graph on ``n_nodes`` nodes."""
    if n_nodes < 1:
        raise ValueError("adjacency needs at least one node")
    a = np.ones((n_nodes, n_nodes)) - np.eye(n_nodes)
    a_self = a + np.eye(n_nodes)
    inv_sqrt = 1.0 / np.sqrt(a_self.sum(axis=1))
    return Tensor(a_self * inv_sqrt[:, None] * inv_sqrt[None, :])


@dataclass
class QuadGraph:
    X: Tensor
    A_hat: Tensor


class GcnParams:
    def __init__(self, params, d_in, hidden, rng, dropout_p=0.2, name="gcn"):
        self.W0 = params.add(f"{name}.W0", glorot_uniform(rng, d_in, hidden))
        self.W1 = params.add(f"{name}.W1", glorot_uniform(rng, hidden, hidden))
        self.dropout_p = dropout_p


def gcn_forward(g, p, rng=None, training=False):
    """H1 = ReLU(Â X W0), H2 = ReLU(Â H1 W1), dropout after each ReLU when training."""
    x, a_hat = g.X, g.A_hat
    if x.shape[-1] != p.W0.shape[0]:
        raise ad.ShapeError(f"gcn: incompatible shapes {list(x.shape)} and {list(p.W0.shape)}")
    if x.shape[-2] != a_hat.shape[0]:
        raise ad.ShapeError(f"gcn: incompatible shapes {list(x.shape)} and {list(a_hat.shape)}")
    h1 = ad.relu(ad.matmul(a_hat, ad.matmul(x, p.W0)))
    h1 = dropout(h1, p.dropout_p, rng, training)
    h2 = ad.relu(ad.matmul(a_hat, ad.matmul(h1, p.W1)))
    return dropout(h2, p.dropout_p, rng, training)


def mean_pool(h2):
    """Average over the node axis; bitwise invariant to node order."""
    return ad.mean_axis(h2, -2, order_invariant=True)
