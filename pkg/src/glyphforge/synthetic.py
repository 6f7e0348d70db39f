"""Synthetic handwriting-style lowercase glyphs for offline testing.

Letters are rendered from the TrueType fonts bundled with matplotlib, then
distorted (scale, shear, rotation, offset, stroke weight, blur, noise) so
that no two samples of a class are identical.
"""

from pathlib import Path

import matplotlib
import numpy as np
from PIL import Image, ImageDraw, ImageFilter, ImageFont

from .dataset import LETTERS, LabeledImage, save_png

FONT_FILES = (
    "DejaVuSans.ttf",
    "DejaVuSans-Bold.ttf",
    "DejaVuSans-Oblique.ttf",
    "DejaVuSerif.ttf",
    "DejaVuSerif-Italic.ttf",
    "DejaVuSansMono.ttf",
    "STIXGeneral.ttf",
    "STIXGeneralItalic.ttf",
    "cmr10.ttf",
)


def font_paths():
    base = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
    found = [base / f for f in FONT_FILES if (base / f).exists()]
    if not found:
        raise FileNotFoundError(f"no bundled TrueType fonts under {base}")
    return found


_FONT_CACHE = {}


def _font(path, size):
    key = (str(path), size)
    if key not in _FONT_CACHE:
        _FONT_CACHE[key] = ImageFont.truetype(str(path), size)
    return _FONT_CACHE[key]


def render_glyph(letter, rng, size=64, noise=0.04):
    """One distorted rendering of ``letter``; returns ``[size, size]`` float32, ink dark."""
    fonts = font_paths()
    canvas = 2 * size
    font = _font(fonts[rng.integers(len(fonts))], int(canvas * rng.uniform(0.45, 0.65)))
    im = Image.new("L", (canvas, canvas), 255)
    draw = ImageDraw.Draw(im)
    left, top, right, bottom = draw.textbbox((0, 0), letter, font=font)
    x = (canvas - (right - left)) / 2 - left + rng.uniform(-0.08, 0.08) * canvas
    y = (canvas - (bottom - top)) / 2 - top + rng.uniform(-0.08, 0.08) * canvas
    draw.text((x, y), letter, fill=0, font=font)

    weight = rng.integers(-1, 3)
    if weight > 0:
        im = im.filter(ImageFilter.MinFilter(2 * int(weight) + 1))

    # inverse affine about the canvas centre: rotation, shear and anisotropic scale
    angle = np.deg2rad(rng.uniform(-12, 12))
    shear = rng.uniform(-0.3, 0.3)
    sx, sy = rng.uniform(0.85, 1.15, size=2)
    a = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    a = a @ np.array([[1.0, shear], [0.0, 1.0]]) @ np.diag([sx, sy])
    inv = np.linalg.inv(a)
    c = canvas / 2
    offset = np.array([c, c]) - inv @ np.array([c, c])
    im = im.transform(
        (canvas, canvas),
        Image.AFFINE,
        (inv[0, 0], inv[0, 1], offset[0], inv[1, 0], inv[1, 1], offset[1]),
        resample=Image.BILINEAR,
        fillcolor=255,
    )
    im = im.filter(ImageFilter.GaussianBlur(rng.uniform(0.3, 1.2)))
    im = im.resize((size, size), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float64) / 255.0
    paper = rng.uniform(0.85, 1.0)
    ink = rng.uniform(0.0, 0.25)
    arr = ink + (paper - ink) * arr
    arr += rng.normal(0.0, noise, size=arr.shape)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def make_glyphs(per_class, seed=0, size=64, letters=LETTERS, noise=0.04):
    """``per_class`` samples of each letter as LabeledImages with synthetic paths."""
    images = []
    for label, letter in enumerate(LETTERS):
        if letter not in letters:
            continue
        for i in range(per_class):
            rng = np.random.default_rng([seed, label, i])
            pixels = render_glyph(letter, rng, size=size, noise=noise)
            images.append(LabeledImage(pixels[:, :, None], label, path=f"{letter}/{letter}_{i:04d}.png"))
    return images


def write_glyph_tree(root, per_class, seed=0, size=64, letters=LETTERS):
    """Write ``root/<letter>/<letter>_NNNN.png`` files; returns the written paths."""
    root = Path(root)
    paths = []
    for img in make_glyphs(per_class, seed=seed, size=size, letters=letters):
        path = root / img.path
        save_png(img.pixels, path)
        paths.append(path)
    return paths
