"""Vision Transformer encoder: patch embedding, CLS token, learned positions,
pre-norm transformer blocks and a final layer norm."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import LayerNorm, LinearLayer, MhaBlock, dropout, mha_forward


def patchify(image, patch_size):
    """Split [..., C, S, S] into [..., (S/P)^2, C*P*P] row-major patches.

    Each patch row is flattened channel-major, then by row, then by column.
    """
    *lead, c, h, w = image.shape
    p = patch_size
    if h != w or h % p:
        raise ad.ShapeError(f"patchify: patch size {p} does not divide image shape {list(image.shape)}")
    g = h // p
    nl = len(lead)
    x = ad.reshape(image, tuple(lead) + (c, g, p, g, p))
    # [..., gy, gx, c, py, px]
    x = ad.permute(x, tuple(range(nl)) + (nl + 1, nl + 3, nl, nl + 2, nl + 4))
    return ad.reshape(x, tuple(lead) + (g * g, c * p * p))


@dataclass
class ViTOutput:
    f_image: Tensor
    attn_by_layer: list


class _Block:
    def __init__(self, params, name, cfg, rng):
        self.ln1 = LayerNorm(params, f"{name}.ln1", cfg.embed_dim)
        self.attn = MhaBlock(params, f"{name}.attn", cfg.embed_dim, cfg.n_heads, rng)
        self.ln2 = LayerNorm(params, f"{name}.ln2", cfg.embed_dim)
        self.fc1 = LinearLayer(params, f"{name}.fc1", cfg.embed_dim, cfg.mlp_dim, rng)
        self.fc2 = LinearLayer(params, f"{name}.fc2", cfg.mlp_dim, cfg.embed_dim, rng)


class ViT:
    """Encoder whose parameters live in a shared :class:`ModelParams` under ``name``."""

    def __init__(self, params, cfg, rng, name="vit"):
        self.cfg = cfg
        d = cfg.embed_dim
        self.embed = LinearLayer(params, f"{name}.patch_embed", cfg.patch_dim, d, rng)
        self.cls = params.add(f"{name}.cls", rng.normal(0.0, 0.02, (d,)))
        self.pos = params.add(f"{name}.pos", rng.normal(0.0, 0.02, (cfg.n_patches + 1, d)))
        self.blocks = [_Block(params, f"{name}.blocks.{i}", cfg, rng) for i in range(cfg.n_layers)]
        self.ln_f = LayerNorm(params, f"{name}.ln_f", d)

    def __call__(self, image, rng=None, training=False):
        return vit_forward(self, image, rng, training)


def vit_forward(vit, image, rng=None, training=False):
    """Encode [C, S, S] (or a batch [B, C, S, S]); f_image is the CLS output."""
    cfg = vit.cfg
    if not isinstance(image, Tensor):
        image = Tensor(image)
    expect = (cfg.channels, cfg.image_size, cfg.image_size)
    if image.ndim not in (3, 4) or tuple(image.shape[-3:]) != expect:
        raise ad.ShapeError(f"vit: image shape {list(image.shape)} does not match config {list(expect)}")
    single = image.ndim == 3
    if single:
        image = ad.reshape(image, (1,) + expect)
    b = image.shape[0]
    d = cfg.embed_dim
    p_drop = cfg.dropout if training else 0.0

    if cfg.pixel_mean or cfg.pixel_std != 1:
        image = ad.scale(ad.add(image, Tensor.wrap(np.asarray(-cfg.pixel_mean, dtype=image.data.dtype))),
                         1.0 / cfg.pixel_std)
    tokens = vit.embed(patchify(image, cfg.patch_size))
    cls = ad.add(Tensor.wrap(np.zeros((b, 1, d), dtype=tokens.data.dtype)), vit.cls)
    x = ad.add(ad.concat([cls, tokens], axis=1), vit.pos)
    attn_maps = []
    for blk in vit.blocks:
        a, attn = mha_forward(blk.attn, blk.ln1(x), rng, p_drop, training)
        x = ad.add(x, dropout(a, p_drop, rng, training))
        m = blk.fc2(ad.gelu(blk.fc1(blk.ln2(x))))
        x = ad.add(x, dropout(m, p_drop, rng, training))
        attn_maps.append(attn)
    x = vit.ln_f(x)
    f_image = ad.index(x, (slice(None), 0))
    if single:
        f_image = ad.reshape(f_image, (d,))
        attn_maps = [ad.reshape(a, a.shape[1:]) for a in attn_maps]
    return ViTOutput(f_image, attn_maps)
