"""Attention fusion of the global and quadrant features, plus the classifier."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gcn import mean_pool
from .nn import LinearLayer, MhaBlock, linear_forward, mha_forward


@dataclass
class FusionOutput:
    logits: Tensor
    f_fused: Tensor
    quad_attn: np.ndarray  # [..., 4], head-averaged attention of the global token


class FusionHead:
    """Token sequence [g, q1..q4] -> one MHA layer -> output at g.

    g projects concat(F_image, mean_pool(nodes)); each q_i projects one node
    row with shared weights. No positional encoding on the fusion tokens.
    """

    def __init__(self, params, d_image, d_graph, cfg, rng, name="fusion"):
        self.d_image, self.d_graph = d_image, d_graph
        self.d_model = cfg.d_model
        self.g_proj = LinearLayer(params, f"{name}.g_proj", d_image + d_graph, cfg.d_model, rng)
        self.q_proj = LinearLayer(params, f"{name}.q_proj", d_graph, cfg.d_model, rng)
        self.mha = MhaBlock(params, f"{name}.mha", cfg.d_model, cfg.n_heads, rng)


def combine(f_image, node_feats):
    """F_combined = concat(F_image, F_graph)."""
    return ad.concat([f_image, mean_pool(node_feats)], axis=-1)


def fuse(f_image, node_feats, head, classifier, rng=None, training=False):
    """Fuse [..., D] global and [..., 4, H] node features; classify the result."""
    if f_image.shape[-1] != head.d_image or node_feats.shape[-1] != head.d_graph \
            or node_feats.shape[-2] != 4:
        raise ad.ShapeError(
            f"fuse: incompatible shapes {list(f_image.shape)} and {list(node_feats.shape)}")
    lead = f_image.shape[:-1]
    d = head.d_model
    g = linear_forward(head.g_proj, combine(f_image, node_feats))
    q = linear_forward(head.q_proj, node_feats)
    seq = ad.concat([ad.reshape(g, lead + (1, d)), q], axis=-2)
    out, attn = mha_forward(head.mha, seq, rng, 0.0, training)
    f_fused = ad.index(out, (Ellipsis, 0, slice(None)))
    quad_attn = attn.data[..., 0, 1:].mean(axis=-2)
    return FusionOutput(classify(f_fused, classifier), f_fused, quad_attn)


def classify(features, head):
    """Raw two-class logits (class 0 normal, class 1 abnormal)."""
    return linear_forward(head, features)


def predict(logits):
    """Argmax over the last axis; ties go to the lower class index."""
    return np.argmax(np.asarray(logits), axis=-1)
