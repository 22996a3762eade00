"""The hybrid classifier and its ablation variants."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import MODES
from .fusion import FusionHead, combine, fuse
from .gcn import GcnParams, QuadGraph, build_adjacency, gcn_forward, mean_pool, split_quadrants
from .nn import LinearLayer, ModelParams, linear_forward
from .rng import Rng
from .vit import ViT


@dataclass
class ModelOutput:
    logits: Tensor          # [B, 2]
    features: Tensor        # representation fed to the contrastive loss
    quad_attn: np.ndarray = None   # [B, 4] fusion attention, full mode only
    vit_attn: list = None   # per-layer [B, heads, T, T] for the whole image


class HybridModel:
    """ViT global branch + quadrant GCN branch + attention fusion.

    ``mode`` selects the ablation wiring:
      full          fusion attention over global and quadrant tokens
      vit_only      classifier on F_image
      gnn_only      classifier on F_graph
      no_attention  classifier on concat(F_image, F_graph)
    """

    def __init__(self, cfg, mode="full", seed=0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
        self.cfg, self.mode = cfg, mode
        rng = Rng(seed).spawn(0x1A17)
        self.params = ModelParams()
        d, h = cfg.vit.embed_dim, cfg.gcn.hidden
        self.vit = ViT(self.params, cfg.vit, rng)
        self.uses_global = mode != "gnn_only"
        self.uses_graph = mode != "vit_only"
        self.gcn = GcnParams(self.params, d, h, rng, cfg.gcn.dropout) if self.uses_graph else None
        self.fusion = FusionHead(self.params, d, h, cfg.fusion, rng) if mode == "full" else None
        head_in = {"full": cfg.fusion.d_model, "vit_only": d, "gnn_only": h, "no_attention": d + h}[mode]
        self.head = LinearLayer(self.params, "head", head_in, 2, rng)
        self.a_hat = build_adjacency(4)

    def __call__(self, images, rng=None, training=False):
        return self.forward(images, rng, training)

    def forward(self, images, rng=None, training=False):
        """Run on a batch [B, C, S, S] of preprocessed images."""
        if not isinstance(images, Tensor):
            images = Tensor(images)
        if images.ndim == 3:
            images = ad.reshape(images, (1,) + images.shape)
        b = images.shape[0]
        c, s = images.shape[1], images.shape[-1]
        d = self.cfg.vit.embed_dim
        views = []
        if self.uses_global:
            views.append(ad.reshape(images, (b, 1, c, s, s)))
        if self.uses_graph:
            views.append(split_quadrants(images))
        stack = views[0] if len(views) == 1 else ad.concat(views, axis=1)
        k = stack.shape[1]
        enc = self.vit(ad.reshape(stack, (b * k, c, s, s)), rng, training)
        feats = ad.reshape(enc.f_image, (b, k, d))

        vit_attn = None
        f_image = nodes = None
        if self.uses_global:
            f_image = ad.index(feats, (slice(None), 0))
            vit_attn = [a.data.reshape((b, k) + a.shape[1:])[:, 0] for a in enc.attn_by_layer]
        if self.uses_graph:
            x = ad.index(feats, (slice(None), slice(k - 4, k)))
            nodes = gcn_forward(QuadGraph(x, self.a_hat), self.gcn, rng, training)

        if self.mode == "full":
            out = fuse(f_image, nodes, self.fusion, self.head, rng, training)
            return ModelOutput(out.logits, out.f_fused, out.quad_attn, vit_attn)
        if self.mode == "vit_only":
            feat = f_image
        elif self.mode == "gnn_only":
            feat = mean_pool(nodes)
        else:
            feat = combine(f_image, nodes)
        return ModelOutput(linear_forward(self.head, feat), feat, None, vit_attn)
