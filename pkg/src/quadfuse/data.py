"""Synthetic mammogram-like data, on-disk format, preprocessing, augmentation
and stratified splitting.

On disk a dataset is a directory of binary PGM images plus ``manifest.csv``
(``path,label,split``) and ``dataset.json`` (image size, seed, ratios).
"""
import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .rng import Rng

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.10, 0.20)
MANIFEST = "manifest.csv"
META = "dataset.json"


class DataError(ValueError):
    pass


# ---------------------------------------------------------------- PGM / PPM

def _read_token(data, pos):
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DataError("truncated PNM header")
    return data[start:pos], pos


def _read_pnm(path, magic, channels):
    with open(path, "rb") as fh:
        data = fh.read()
    tok, pos = _read_token(data, 0)
    if tok != magic:
        raise DataError(f"{path}: expected {magic.decode()} image, got {tok[:2]!r}")
    w, pos = _read_token(data, pos)
    h, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte before raster
    n = w * h * channels
    raster = data[pos:pos + n]
    if len(raster) != n:
        raise DataError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape((h, w, channels) if channels > 1 else (h, w)).copy()


def read_pgm(path):
    """Binary P5 image as uint8 [H, W]."""
    return _read_pnm(path, b"P5", 1)


def write_pgm(path, pixels):
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


def read_ppm(path):
    """Binary P6 image as uint8 [H, W, 3]."""
    return _read_pnm(path, b"P6", 3)


def write_ppm(path, rgb):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, c = rgb.shape
    if c != 3:
        raise DataError("PPM needs an RGB image")
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(rgb.tobytes())


# ---------------------------------------------------------------- synthetic data

def _gaussian_blob(size, cy, cx, sigma, peak):
    yy, xx = np.mgrid[0:size, 0:size]
    return peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))


def synth_image(size, abnormal, rng):
    """One 8-bit image: Gaussian texture + ramp, plus blobs when abnormal."""
    img = rng.normal(0.45, 0.1, (size, size))
    theta = rng.uniform(0.0, 2 * math.pi)
    amp = rng.uniform(0.0, 0.1)
    coords = (np.arange(size) + 0.5) / size - 0.5
    img += amp * (np.cos(theta) * coords[None, :] + np.sin(theta) * coords[:, None])
    lo, hi = 0.15 * size, 0.85 * size
    if abnormal:
        for _ in range(1 + rng.integers(3)):
            img += _gaussian_blob(size, rng.uniform(lo, hi), rng.uniform(lo, hi),
                                  rng.uniform(3.0, 6.0), rng.uniform(0.35, 0.5))
    elif rng.uniform() < 0.5:
        img += _gaussian_blob(size, rng.uniform(lo, hi), rng.uniform(lo, hi),
                              rng.uniform(3.0, 6.0), rng.uniform(0.0, 0.1))
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


@dataclass
class Sample:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    root: str
    rows: list
    size: int
    seed: int
    ratios: tuple = DEFAULT_RATIOS
    extra: dict = field(default_factory=dict)

    def split(self, name):
        return [r for r in self.rows if r.split == name]

    def labels(self, name=None):
        rows = self.rows if name is None else self.split(name)
        return [r.label for r in rows]


def generate_synthetic(n, size, abnormal_frac, seed, out_dir, ratios=DEFAULT_RATIOS):
    """Write ``n`` synthetic images plus manifest and metadata to ``out_dir``."""
    if n < 10:
        raise DataError(f"need at least 10 images, got {n}")
    if not 0 < abnormal_frac < 1:
        raise DataError("abnormal_frac must lie strictly between 0 and 1")
    if size < 2 or size % 2:
        raise DataError("image size must be a positive even number")
    n_abn = int(math.floor(n * abnormal_frac + 0.5))
    n_abn = min(max(n_abn, 1), n - 1)
    root = Rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[root.spawn(1).permutation(n)[:n_abn]] = 1
    splits = stratified_split(labels.tolist(), ratios, seed)
    try:
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        rows = []
        width = max(4, len(str(n - 1)))
        for i in range(n):
            rel = f"images/img_{i:0{width}d}.pgm"
            write_pgm(os.path.join(out_dir, rel), synth_image(size, bool(labels[i]), root.spawn(2, i)))
            rows.append(Sample(rel, int(labels[i]), splits[i]))
        manifest = DatasetManifest(out_dir, rows, size, seed, tuple(ratios),
                                   {"n": n, "abnormal_frac": abnormal_frac})
        write_manifest(manifest)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out_dir}: {exc}") from exc
    return manifest


def write_manifest(manifest):
    path = os.path.join(manifest.root, MANIFEST)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "split"])
        for r in manifest.rows:
            writer.writerow([r.path, r.label, r.split])
    meta = {"size": manifest.size, "seed": manifest.seed, "ratios": list(manifest.ratios)}
    meta.update(manifest.extra)
    with open(os.path.join(manifest.root, META), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(root):
    """Load and validate a dataset directory."""
    path = os.path.join(root, MANIFEST)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    meta = {}
    if os.path.isfile(os.path.join(root, META)):
        with open(os.path.join(root, META), encoding="utf-8") as fh:
            meta = json.load(fh)
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "label", "split"]:
            raise DataError(f"{path}: header must be path,label,split")
        for rec in reader:
            label, split = int(rec["label"]), rec["split"]
            if label not in (0, 1) or split not in SPLITS:
                raise DataError(f"{path}: bad row {rec}")
            rows.append(Sample(rec["path"], label, split))
    size = meta.get("size")
    if size is None and rows:
        size = read_pgm(os.path.join(root, rows[0].path)).shape[0]
    extra = {k: v for k, v in meta.items() if k not in ("size", "seed", "ratios")}
    return DatasetManifest(root, rows, int(size), int(meta.get("seed", 0)),
                           tuple(meta.get("ratios", DEFAULT_RATIOS)), extra)


# ---------------------------------------------------------------- preprocessing

def equalize(pixels):
    """256-bin histogram equalization of an 8-bit image.

    h(v) = round((cdf(v) - cdf_min) / (N - cdf_min) * 255), halves rounded up;
    a constant image is returned unchanged.
    """
    pixels = np.asarray(pixels)
    if pixels.size == 0:
        raise DataError("cannot equalize an empty image")
    return kernels.equalize_u8(np.ascontiguousarray(pixels, dtype=np.uint8))


def preprocess(pixels, channels=3):
    """Equalize, scale to [0, 1] and replicate to ``channels`` channels."""
    eq = equalize(pixels).astype(np.float32) / np.float32(255.0)
    return np.ascontiguousarray(np.broadcast_to(eq, (channels,) + eq.shape))


def apply_augment(img, flip, angle_deg, scale):
    """Horizontal flip, then rotation about the centre, then centre zoom.

    Positive angles rotate counter-clockwise as displayed (y axis down). The
    zoom keeps the output size, which crops (scale > 1) or zero-pads
    (scale < 1). Bilinear sampling, zero fill.
    """
    img = np.ascontiguousarray(img, dtype=np.float32)
    if angle_deg == 0 and scale == 1:
        return img[..., ::-1].copy() if flip else img.copy()
    th = math.radians(angle_deg)
    c, s = math.cos(th) / scale, math.sin(th) / scale
    out = kernels.warp_bilinear(img, bool(flip), c, -s, s, c)
    return np.clip(out, 0.0, 1.0)


def draw_augment(rng):
    """Draw (flip, angle, scale) for one augmentation."""
    flip = rng.uniform() < 0.5
    angle = rng.uniform(-15.0, 15.0)
    scale = rng.uniform(0.9, 1.1)
    return flip, angle, scale


def augment(img, rng):
    """Random flip (p=0.5), rotation in [-15, 15] degrees, zoom in [0.9, 1.1]."""
    return apply_augment(img, *draw_augment(rng))


# ---------------------------------------------------------------- splitting

def _largest_remainder(total, ratios):
    exact = [total * r for r in ratios]
    counts = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def split_counts(class_sizes, ratios=DEFAULT_RATIOS):
    """Per-class (train, val, test) counts.

    Each class gets floor(ratio * size) per split, and the leftovers are
    handed out so the overall totals match largest-remainder rounding of the
    whole dataset. No class deviates from its exact share by a full sample.
    """
    total = sum(class_sizes)
    targets = _largest_remainder(total, ratios)
    counts = [[int(math.floor(n * r)) for r in ratios] for n in class_sizes]
    leftover = [n - sum(c) for n, c in zip(class_sizes, counts)]
    deficit = [t - sum(c[j] for c in counts) for j, t in enumerate(targets)]
    cands = sorted(
        ((-(n * r - math.floor(n * r)), ci, j)
         for ci, n in enumerate(class_sizes) for j, r in enumerate(ratios)),
    )
    given = set()
    for _, ci, j in cands:
        if leftover[ci] > 0 and deficit[j] > 0:
            counts[ci][j] += 1
            leftover[ci] -= 1
            deficit[j] -= 1
            given.add((ci, j))
    # the greedy pass can strand a leftover; reroute earlier picks along an
    # augmenting path so no (class, split) cell gets more than one extra
    prefer = {ci: [j for _, c, j in cands if c == ci] for ci in range(len(class_sizes))}

    def place(ci, seen):
        for j in prefer[ci]:
            if (ci, j) in given or j in seen:
                continue
            seen.add(j)
            if deficit[j] > 0:
                deficit[j] -= 1
                given.add((ci, j))
                return True
            for cj in range(len(class_sizes)):
                if (cj, j) in given and place(cj, seen):
                    given.discard((cj, j))
                    given.add((ci, j))
                    return True
        return False

    for ci in range(len(class_sizes)):
        while leftover[ci] > 0:
            if not place(ci, set()):
                raise DataError(f"cannot split class sizes {list(class_sizes)} at ratios {list(ratios)}")
            leftover[ci] -= 1
    return [[int(math.floor(n * r)) + ((ci, j) in given) for j, r in enumerate(ratios)]
            for ci, n in enumerate(class_sizes)]


def stratified_split(labels, ratios=DEFAULT_RATIOS, seed=0):
    """Assign each index to train/val/test, preserving class proportions."""
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise DataError("split ratios must be three values summing to 1")
    labels = list(labels)
    classes = sorted(set(labels))
    members = {c: [i for i, y in enumerate(labels) if y == c] for c in classes}
    for c in classes:
        if len(members[c]) < 3:
            raise DataError(f"class {c} has {len(members[c])} members; need at least 3")
    counts = split_counts([len(members[c]) for c in classes], ratios)
    rng = Rng(seed)
    out = [None] * len(labels)
    for ci, c in enumerate(classes):
        idx = np.asarray(members[c])[rng.spawn(ci).permutation(len(members[c]))]
        start = 0
        for name, k in zip(SPLITS, counts[ci]):
            for i in idx[start:start + k]:
                out[int(i)] = name
            start += k
    return out


# ---------------------------------------------------------------- loading

class ImageSet:
    """Preprocessed images of one split held in memory."""

    def __init__(self, images, labels, raw, paths):
        self.images = images      # float32 [N, 3, S, S]
        self.labels = labels      # int64 [N]
        self.raw = raw            # uint8 [N, S, S]
        self.paths = paths

    def __len__(self):
        return len(self.labels)


def load_split(manifest, split, channels=3):
    rows = manifest.split(split)
    raw = np.stack([read_pgm(os.path.join(manifest.root, r.path)) for r in rows]) if rows else \
        np.zeros((0, manifest.size, manifest.size), dtype=np.uint8)
    images = np.stack([preprocess(p, channels) for p in raw]) if rows else \
        np.zeros((0, channels, manifest.size, manifest.size), dtype=np.float32)
    labels = np.array([r.label for r in rows], dtype=np.int64)
    return ImageSet(images, labels, raw, [r.path for r in rows])
