"""Classification metrics, attention heatmaps and PPM overlays."""
import math
from dataclasses import dataclass

import numpy as np

from .data import write_ppm

METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1")
LOW_COLOR = (32, 32, 32)
HIGH_COLOR = (255, 255, 0)


@dataclass
class ConfusionMatrix:
    """Counts with 'abnormal' (label 1) as the positive class."""
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, labels, preds):
        y = np.asarray(labels).astype(bool)
        p = np.asarray(preds).astype(bool)
        return cls(int(np.sum(y & p)), int(np.sum(~y & p)), int(np.sum(y & ~p)), int(np.sum(~y & ~p)))


def compute_metrics(cm):
    """Accuracy, precision, recall and F1.

    An undefined precision or recall (zero denominator) is reported as 0 and
    listed under ``"undefined"``.
    """
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    undefined = []
    acc = (cm.tp + cm.tn) / cm.total
    if cm.tp + cm.fp:
        prec = cm.tp / (cm.tp + cm.fp)
    else:
        prec = 0.0
        undefined.append("precision")
    if cm.tp + cm.fn:
        rec = cm.tp / (cm.tp + cm.fn)
    else:
        rec = 0.0
        undefined.append("recall")
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return {"accuracy": acc, "precision": prec, "recall": rec, "f1": f1, "undefined": undefined}


def metrics_csv_header():
    return "config," + ",".join(METRIC_COLUMNS)


def metrics_csv_row(name, m):
    return f"{name}," + ",".join(f"{m[k]:.6f}" for k in METRIC_COLUMNS)


def metrics_table(rows):
    """Aligned text table: configuration, accuracy/precision/recall in %, F1."""
    width = max([len("Configuration")] + [len(n) for n, _ in rows])
    head = f"{'Configuration':<{width}}  {'Accuracy (%)':>12}  {'Precision (%)':>13}  {'Recall (%)':>10}  {'F1 Score':>8}"
    lines = [head, "-" * len(head)]
    for name, m in rows:
        lines.append(
            f"{name:<{width}}  {100 * m['accuracy']:>12.1f}  {100 * m['precision']:>13.1f}  "
            f"{100 * m['recall']:>10.1f}  {m['f1']:>8.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- heatmaps

class HeatmapUnavailable(ValueError):
    """The requested attention source does not exist for this model variant."""


@dataclass
class Heatmap:
    weights: np.ndarray  # [Hh, Wh] in [0, 1]
    mode: str


def minmax(raw):
    """Scale to [0, 1]; a constant map becomes all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def quadrant_heatmap(quad_attn):
    """[4] attention (UL, UR, LL, LR) -> normalized 2x2 map."""
    q = np.asarray(quad_attn, dtype=np.float64).reshape(2, 2)
    return Heatmap(minmax(q), "quadrant")


def patch_heatmap(attn_last, grid):
    """Last-layer [heads, T, T] attention -> CLS-to-patch map of shape grid x grid."""
    a = np.asarray(attn_last, dtype=np.float64)
    row = a[:, 0, 1:].mean(axis=0)
    if row.size != grid * grid:
        raise ValueError(f"attention has {row.size} patch tokens, expected {grid * grid}")
    return Heatmap(minmax(row.reshape(grid, grid)), "patch")


def extract_heatmap(output, mode, grid=None, index=0):
    """Heatmap for sample ``index`` of a :class:`~quadfuse.model.ModelOutput`."""
    if mode == "quadrant":
        if output.quad_attn is None:
            raise HeatmapUnavailable("quadrant heatmap needs the fusion attention (full mode only)")
        return quadrant_heatmap(output.quad_attn[index])
    if mode == "patch":
        if output.vit_attn is None:
            raise HeatmapUnavailable("patch heatmap needs the global ViT pass (not run in gnn_only mode)")
        last = output.vit_attn[-1][index]
        g = grid or int(math.isqrt(last.shape[-1] - 1))
        return patch_heatmap(last, g)
    raise ValueError(f"unknown heatmap mode {mode!r}")


def colormap(w, low=LOW_COLOR, high=HIGH_COLOR):
    """Linear ramp from ``low`` (w=0) to ``high`` (w=1), floored to bytes."""
    w = np.asarray(w, dtype=np.float64)[..., None]
    lo = np.asarray(low, dtype=np.float64)
    hi = np.asarray(high, dtype=np.float64)
    return np.floor(lo + w * (hi - lo)).astype(np.uint8)


def upsample_nearest(weights, height, width):
    hh, wh = weights.shape
    rows = (np.arange(height) * hh) // height
    cols = (np.arange(width) * wh) // width
    return weights[rows[:, None], cols[None, :]]


def overlay(base, hm, alpha=0.5, low=LOW_COLOR, high=HIGH_COLOR):
    """Blend a grayscale [S, S] uint8 base with the colour-mapped heatmap."""
    base = np.asarray(base, dtype=np.uint8)
    h, w = base.shape
    color = colormap(upsample_nearest(hm.weights, h, w), low, high).astype(np.float64)
    gray = base.astype(np.float64)[..., None]
    return np.floor((1.0 - alpha) * gray + alpha * color).astype(np.uint8)


def render_overlay(base, hm, alpha=0.5, path=None, low=LOW_COLOR, high=HIGH_COLOR):
    """Overlay as uint8 RGB; written as binary PPM when ``path`` is given."""
    rgb = overlay(base, hm, alpha, low, high)
    if path is not None:
        write_ppm(path, rgb)
    return rgb
