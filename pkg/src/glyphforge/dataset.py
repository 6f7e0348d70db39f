"""Image ingestion, preprocessing, augmentation and dataset splitting.

Pixels are grayscale floats in ``[0, 1]`` with dark ink on a light
background. The image operations accept ``[h, w]`` or ``[h, w, 1]`` arrays and
return the same layout as float32.
"""

import csv
import logging
import os
import string
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, LayoutError

log = logging.getLogger(__name__)

LETTERS = string.ascii_lowercase
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
METHODS = ("brightness", "contrast", "rotation", "sharpness")
SPLITS = ("train", "val", "test")
BACKGROUND = 1.0


@dataclass
class LabeledImage:
    pixels: np.ndarray  # [h, w, 1] float32 in [0, 1]
    label: int
    path: str = ""
    provenance: str = "original"  # or the augmentation method name
    source: str = ""  # path of the original an augmented sample came from
    param: float = float("nan")
    copy: int = 0

    def with_pixels(self, pixels):
        return replace(self, pixels=pixels)


def worker_count():
    """Thread cap from ``GLYPHFORGE_THREADS`` (0 or unset means one per CPU)."""
    try:
        n = int(os.environ.get("GLYPHFORGE_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def label_for_dir(name):
    if len(name) != 1 or name not in LETTERS:
        raise LayoutError(f"class directory {name!r} is not a single lowercase letter a-z")
    return LETTERS.index(name)


# ---------------------------------------------------------------- decoding --


def to_unit(u8):
    return np.asarray(u8).astype(np.float32) / np.float32(255)


def decode(im):
    """Decode a PIL image to an ``[h, w]`` float32 luminance array in [0, 1]."""
    if im.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(im, dtype=np.float64)
        return np.clip(arr / 65535.0, 0.0, 1.0).astype(np.float32)
    if im.mode == "L":
        return to_unit(np.asarray(im))
    if im.mode in ("LA", "RGBA", "PA", "P") or "transparency" in im.info:
        # transparent regions are composited onto white paper
        rgba = np.asarray(im.convert("RGBA"), dtype=np.float64)
        alpha = rgba[..., 3:] / 255.0
        rgb = rgba[..., :3] * alpha + 255.0 * (1.0 - alpha)
    else:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    lum = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(lum / 255.0, 0.0, 1.0).astype(np.float32)


def load_image(path, label=None):
    """Read a PNG/JPEG; the label defaults to the parent directory's letter."""
    path = Path(path)
    if label is None:
        label = label_for_dir(path.parent.name)
    try:
        with Image.open(path) as im:
            im.load()
            pixels = decode(im)
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return LabeledImage(pixels=pixels[:, :, None], label=label, path=str(path))


def save_png(pixels, path):
    """Write an 8-bit grayscale PNG (values rounded to the nearest of 256 levels)."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    u8 = np.clip(np.rint(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def discover(root):
    """List ``(path, label)`` for every image under ``root/<letter>/``, sorted by path."""
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"not a directory: {root}")
    found = []
    for child in sorted(root.iterdir()):
        if not child.is_dir():
            continue
        label = label_for_dir(child.name)
        files = sorted(p for p in child.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            log.warning("class directory %s contains no images", child)
        found += [(p, label) for p in files]
    return found


# ------------------------------------------------------------ pixel helpers --


def _plane(img):
    arr = np.asarray(img)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ValueError(f"expected a single-channel image, got {arr.shape}")
        return arr[:, :, 0], True
    if arr.ndim != 2:
        raise ValueError(f"expected [h, w] or [h, w, 1], got {arr.shape}")
    return arr, False


def _restore(plane, had_channel):
    out = np.clip(plane, 0.0, 1.0).astype(np.float32)
    return out[:, :, None] if had_channel else out


def _copy(img):
    return np.array(img, dtype=np.float32, copy=True)


def autocrop(img, threshold=0.5, margin=2, invert=False):
    """Crop to the ink bounding box plus ``margin`` pixels, clamped to the image.

    Ink is ``pixel < threshold`` (``pixel > threshold`` with ``invert``). An
    image without ink is returned unchanged.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    plane, _ = _plane(img)
    ink = plane > threshold if invert else plane < threshold
    rows = np.flatnonzero(ink.any(axis=1))
    if rows.size == 0:
        return _copy(img)
    cols = np.flatnonzero(ink.any(axis=0))
    h, w = plane.shape
    y0, y1 = max(rows[0] - margin, 0), min(rows[-1] + margin + 1, h)
    x0, x1 = max(cols[0] - margin, 0), min(cols[-1] + margin + 1, w)
    return _copy(np.asarray(img)[y0:y1, x0:x1])


def _bilinear_axis(n_in, n_out):
    # half-pixel centres: output pixel i samples input coordinate (i + 0.5) * n_in / n_out - 0.5
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def resize(img, height=224, width=224):
    """Bilinear resize; a same-size request returns an exact copy."""
    plane, had = _plane(img)
    h, w = plane.shape
    if h < 1 or w < 1:
        raise ValueError("cannot resize an empty image")
    if (h, w) == (height, width):
        return _copy(img)
    src = plane.astype(np.float64)
    y0, y1, wy = _bilinear_axis(h, height)
    x0, x1, wx = _bilinear_axis(w, width)
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy)[:, None] + bottom * wy[:, None]
    return _restore(out, had)


def adjust_brightness(img, factor):
    if factor < 0:
        raise ConfigError(f"brightness factor must be >= 0, got {factor}")
    if factor == 1.0:
        return _copy(img)
    plane, had = _plane(img)
    return _restore(plane.astype(np.float64) * factor, had)


def adjust_contrast(img, factor):
    """Scale deviations from the image mean by ``factor``; 0 gives a flat mean image."""
    if factor < 0:
        raise ConfigError(f"contrast factor must be >= 0, got {factor}")
    if factor == 1.0:
        return _copy(img)
    plane, had = _plane(img)
    p = plane.astype(np.float64)
    mean = p.mean()
    return _restore(mean + (p - mean) * factor, had)


def box_blur(plane):
    """3x3 mean filter with replicated borders."""
    p = np.pad(np.asarray(plane, dtype=np.float64), 1, mode="edge")
    h, w = p.shape[0] - 2, p.shape[1] - 2
    acc = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            acc += p[dy : dy + h, dx : dx + w]
    return acc / 9.0


def adjust_sharpness(img, factor):
    """Unsharp blend ``blur + factor * (p - blur)``; factor 0 is the box blur itself."""
    if factor < 0:
        raise ConfigError(f"sharpness factor must be >= 0, got {factor}")
    if factor == 1.0:
        return _copy(img)
    plane, had = _plane(img)
    p = plane.astype(np.float64)
    blur = box_blur(p)
    return _restore(blur + factor * (p - blur), had)


def _snap(coords, tol=1e-9):
    nearest = np.rint(coords)
    return np.where(np.abs(coords - nearest) < tol, nearest, coords)


def rotate(img, degrees, fill=BACKGROUND):
    """Rotate counter-clockwise about the image centre with bilinear sampling.

    Output keeps the input size; pixels sampled from outside the source take
    ``fill`` (white paper by default).
    """
    if not -180.0 <= degrees <= 180.0:
        raise ConfigError(f"rotation must be within [-180, 180] degrees, got {degrees}")
    if degrees == 0:
        return _copy(img)
    plane, had = _plane(img)
    h, w = plane.shape
    src = plane.astype(np.float64)
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    sx = _snap(cx + c * dx - s * dy)
    sy = _snap(cy + s * dx + c * dy)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx, fy = sx - x0, sy - y0

    def tap(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = src[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside, vals, fill)

    out = (
        tap(y0, x0) * (1 - fx) * (1 - fy)
        + tap(y0, x0 + 1) * fx * (1 - fy)
        + tap(y0 + 1, x0) * (1 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
    )
    return _restore(out, had)


APPLY = {
    "brightness": adjust_brightness,
    "contrast": adjust_contrast,
    "rotation": rotate,
    "sharpness": adjust_sharpness,
}


# ------------------------------------------------------------- augmentation --


@dataclass
class MethodPlan:
    enabled: bool = True
    low: float = 1.0
    high: float = 1.0
    count: int = 1  # new samples per original
    probability: float = 1.0  # chance that each of those samples is kept

    def validate(self, name):
        if self.count < 0:
            raise ConfigError(f"{name}: count must be >= 0")
        if self.low > self.high:
            raise ConfigError(f"{name}: range [{self.low}, {self.high}] is not ordered")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError(f"{name}: probability must be in [0, 1]")


def _default_methods():
    return {
        "brightness": MethodPlan(low=0.7, high=1.3),
        "contrast": MethodPlan(low=0.7, high=1.3),
        "rotation": MethodPlan(low=-15.0, high=15.0),
        "sharpness": MethodPlan(low=0.5, high=2.0),
    }


@dataclass
class AugmentPlan:
    methods: dict = field(default_factory=_default_methods)
    seed: int = 42

    @classmethod
    def disabled(cls, seed=42):
        plan = cls(seed=seed)
        for m in plan.methods.values():
            m.enabled = False
        return plan

    def validate(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown augmentation methods: {sorted(unknown)}")
        for name, m in self.methods.items():
            m.validate(name)
        return self


def _sample_key(img, index):
    return zlib.crc32(img.path.encode("utf-8")) if img.path else index


def augment_dataset(images, plan):
    """Return the originals followed by augmented copies.

    Each copy draws its parameter from a generator seeded by (plan seed,
    source path, method, copy index), so the result does not depend on
    processing order and copies of one original never depend on another.
    """
    plan.validate()
    out = list(images)
    extra = []
    for index, img in enumerate(images):
        key = _sample_key(img, index)
        for mi, name in enumerate(METHODS):
            mp = plan.methods.get(name)
            if mp is None or not mp.enabled:
                continue
            for copy in range(mp.count):
                rng = np.random.default_rng([plan.seed, key, mi, copy])
                keep = rng.random() < mp.probability
                value = float(rng.uniform(mp.low, mp.high))
                if not keep:
                    continue
                pixels = APPLY[name](img.pixels, value)
                stem = img.path.rsplit(".", 1)[0] if img.path else f"sample{index}"
                extra.append(
                    LabeledImage(
                        pixels=pixels,
                        label=img.label,
                        path=f"{stem}__{name}_{copy}.png",
                        provenance=name,
                        source=img.path,
                        param=value,
                        copy=copy,
                    )
                )
    extra.sort(key=lambda a: (a.source, METHODS.index(a.provenance), a.copy))
    return out + extra


# ---------------------------------------------------------------- splitting --


@dataclass
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass
class SplitManifest:
    entries: list
    mode: str = "augment-first"

    def paths(self, split):
        return [e.path for e in self.entries if e.split == split]

    def subset(self, split):
        return [e for e in self.entries if e.split == split]

    def counts(self):
        return {s: sum(e.split == s for e in self.entries) for s in SPLITS}

    def partition(self, images):
        """Group ``images`` (matched by path) into ``{split: [LabeledImage]}``."""
        by_path = {img.path: img for img in images}
        return {s: [by_path[e.path] for e in self.entries if e.split == s] for s in SPLITS}

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "label", "split"])
            for e in self.entries:
                writer.writerow([e.path, LETTERS[e.label], e.split])

    @classmethod
    def read_csv(cls, path, mode="augment-first"):
        entries = []
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["path", "label", "split"]:
                raise DataError(f"{path}: expected header path,label,split, got {reader.fieldnames}")
            for row in reader:
                label = row["label"]
                label = LETTERS.index(label) if label in LETTERS else int(label)
                if row["split"] not in SPLITS:
                    raise DataError(f"{path}: unknown split {row['split']!r}")
                entries.append(ManifestEntry(row["path"], label, row["split"]))
        return cls(entries=entries, mode=mode)


def _cuts(n, ratios):
    fr = [Fraction(r).limit_denominator(10**6) for r in ratios]
    if len(fr) != 3 or any(r < 0 for r in fr) or sum(fr) != 1:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    return int(fr[0] * n), int((fr[0] + fr[1]) * n)


def split_indices(n, ratios=(0.8, 0.1, 0.1), seed=42):
    """Shuffle ``range(n)`` and cut at ``floor(r0 * n)`` and ``floor((r0 + r1) * n)``."""
    if n == 0:
        raise DataError("cannot split an empty dataset")
    c1, c2 = _cuts(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    assign = np.empty(n, dtype=object)
    assign[perm[:c1]] = "train"
    assign[perm[c1:c2]] = "val"
    assign[perm[c2:]] = "test"
    return list(assign)


def split_dataset(images, ratios=(0.8, 0.1, 0.1), seed=42, mode="augment-first"):
    """Assign every sample to train/val/test.

    ``augment-first`` mode shuffles the whole (already augmented) pool. ``leakage-safe``
    splits the originals only; augmented copies follow their source into train
    and are dropped when the source went to val or test.
    """
    if not images:
        raise DataError("cannot split an empty dataset")
    if mode == "augment-first":
        assign = split_indices(len(images), ratios, seed)
        entries = [ManifestEntry(img.path, img.label, s) for img, s in zip(images, assign)]
        return SplitManifest(entries=entries, mode=mode)
    if mode != "leakage-safe":
        raise ConfigError(f"unknown split mode {mode!r}")
    originals = [img for img in images if img.provenance == "original"]
    assign = split_indices(len(originals), ratios, seed)
    by_source = {img.path: s for img, s in zip(originals, assign)}
    entries = []
    for img in images:
        split = by_source[img.path] if img.provenance == "original" else by_source.get(img.source)
        if split == "train" or img.provenance == "original":
            entries.append(ManifestEntry(img.path, img.label, split))
    return SplitManifest(entries=entries, mode=mode)


# ------------------------------------------------------------ bulk loading --


def resolve(path, base_dir):
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def load_samples(entries, base_dir=None, compact=False, expected_size=None):
    """Decode manifest entries into ``(X, y)`` with ``X`` of shape ``[n, h, w, 1]``.

    ``compact`` stores 8-bit levels (uint8) instead of float32;
    :func:`as_float` recovers the exact float values for 8-bit sources.
    """
    entries = list(entries)
    if not entries:
        raise DataError("no samples to load")

    def one(entry):
        img = load_image(resolve(entry.path, base_dir), label=entry.label)
        px = img.pixels
        if expected_size is not None and px.shape[:2] != (expected_size, expected_size):
            raise DataError(f"{entry.path}: image is {px.shape[0]}x{px.shape[1]}, expected {expected_size}x{expected_size}")
        if compact:
            return np.rint(px.astype(np.float64) * 255.0).astype(np.uint8)
        return px

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        arrays = list(pool.map(one, entries))
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DataError(f"images have differing sizes: {sorted(shapes)}")
    X = np.stack(arrays)
    y = np.array([e.label for e in entries], dtype=np.int64)
    return X, y


def as_float(X):
    X = np.asarray(X)
    return to_unit(X) if X.dtype == np.uint8 else X.astype(np.float32, copy=False)


def stack_images(images):
    X = np.stack([np.asarray(img.pixels, dtype=np.float32) for img in images])
    y = np.array([img.label for img in images], dtype=np.int64)
    return X, y
