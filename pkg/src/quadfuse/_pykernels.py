"""Pure-Python/numpy fallbacks for the compiled kernels.

Results are bit-identical to ``_ckernels``; only speed differs.
"""
import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def _stream(state, n):
    s0, s1, s2, s3 = (int(v) for v in state)
    out = [0] * n
    for i in range(n):
        out[i] = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[:] = np.array([s0, s1, s2, s3], dtype=np.uint64)
    return out


def xoshiro_fill_u64(state, out):
    out[:] = np.array(_stream(state, out.shape[0]), dtype=np.uint64)


def xoshiro_fill_uniform(state, out):
    vals = _stream(state, out.shape[0])
    out[:] = np.array([v >> 11 for v in vals], dtype=np.float64) * (1.0 / 9007199254740992.0)


def equalize_u8(img):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    hist = np.bincount(img.ravel(), minlength=256).astype(np.int64)
    cdf = np.cumsum(hist)
    cdf_min = int(cdf[np.flatnonzero(hist)[0]])
    denom = img.size - cdf_min
    if denom == 0:
        return img.copy()
    lut = (2 * (cdf - cdf_min) * 255 + denom) // (2 * denom)
    lut[cdf < cdf_min] = 0
    return lut.astype(np.uint8)[img]


def warp_bilinear(img, flip, a11, a12, a21, a22):
    img = np.ascontiguousarray(img, dtype=np.float32)
    c, h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    dy, dx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    sx = cx + (a11 * dx + a12 * dy)
    sy = cy + (a21 * dx + a22 * dy)
    if flip:
        sx = (w - 1) - sx
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    src = img.astype(np.float64)

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = src[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(ok, vals, 0.0)

    val = ((1.0 - fx) * (1.0 - fy) * tap(y0, x0) + fx * (1.0 - fy) * tap(y0, x0 + 1)) + (
        (1.0 - fx) * fy * tap(y0 + 1, x0) + fx * fy * tap(y0 + 1, x0 + 1)
    )
    return val.astype(np.float32)
