"""Procedural paired images for image-to-image experiments.

Two styles act as two visual domains:

* ``roads``   - aerial-looking green/brown texture crossed by grey roads;
                the target is a white road mask on black.
* ``facades`` - striped brick texture with window and door rectangles; the
                target is a class-colour label map.

Every sample is described by a small scene dict, so the ground truth can be
regenerated from the scene alone.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from camnet.data.dataset import ImageDataset
from camnet.engine.rng import named_rng
from camnet.errors import ContractError

STYLES = ("roads", "facades")

FACADE_COLOURS = {
    "background": (0.0, 0.0, 0.8),
    "window": (1.0, 0.0, 0.0),
    "door": (1.0, 1.0, 0.0),
}


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy + 0.5, xx + 0.5


def _segment_distance(yy, xx, p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    d = q - p
    t = ((yy - p[0]) * d[0] + (xx - p[1]) * d[1]) / max(float(d @ d), 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(yy - (p[0] + t * d[0]), xx - (p[1] + t * d[1]))


def _texture(rng, size, coarse, palette_lo, palette_hi):
    low = rng.uniform(0.0, 1.0, size=(3, coarse, coarse))
    up = np.stack([ndimage.zoom(c, size / coarse, order=1) for c in low])[:, :size, :size]
    lo, hi = np.asarray(palette_lo)[:, None, None], np.asarray(palette_hi)[:, None, None]
    return lo + (hi - lo) * up


# ---------------------------------------------------------------- roads

def _road_scene(rng):
    roads = []
    for _ in range(int(rng.integers(1, 4))):
        # endpoints on two different sides of the unit square
        sides = rng.choice(4, size=2, replace=False)
        pts = []
        for s in sides:
            u = rng.uniform(0.1, 0.9)
            pts.append({0: (0.0, u), 1: (1.0, u), 2: (u, 0.0), 3: (u, 1.0)}[int(s)])
        roads.append({"p": pts[0], "q": pts[1], "width": float(rng.uniform(0.06, 0.12))})
    return {"style": "roads", "roads": roads, "texture_seed": int(rng.integers(2 ** 31))}


def _road_mask(scene, size):
    yy, xx = _grid(size)
    mask = np.zeros((size, size), dtype=bool)
    for r in scene["roads"]:
        p = np.asarray(r["p"]) * size
        q = np.asarray(r["q"]) * size
        mask |= _segment_distance(yy, xx, p, q) <= r["width"] * size / 2.0
    return mask


def _road_input(scene, size):
    rng = np.random.default_rng(scene["texture_seed"])
    img = _texture(rng, size, max(size // 8, 2), (0.15, 0.35, 0.05), (0.45, 0.65, 0.25))
    img += rng.normal(0.0, 0.03, size=img.shape)
    mask = _road_mask(scene, size)
    asphalt = 0.5 + rng.normal(0.0, 0.04, size=(size, size))
    img[:, mask] = asphalt[mask]
    return np.clip(img, 0.0, 1.0)


def _road_label(scene, size):
    mask = _road_mask(scene, size).astype(np.float64)
    return np.repeat(mask[None], 3, axis=0)


# ---------------------------------------------------------------- facades

def _facade_scene(rng):
    rects = []
    rows = int(rng.integers(1, 3))
    cols = int(rng.integers(2, 4))
    for r in range(rows):
        for c in range(cols):
            cy = (r + 0.5) / (rows + 1)
            cx = (c + 0.5) / cols
            h = rng.uniform(0.10, 0.18)
            w = rng.uniform(0.10, 0.6 / cols + 0.05)
            rects.append({"cls": "window", "y0": cy - h / 2, "y1": cy + h / 2, "x0": cx - w / 2, "x1": cx + w / 2})
    dx = rng.uniform(0.3, 0.7)
    dw = rng.uniform(0.12, 0.2)
    rects.append({"cls": "door", "y0": rng.uniform(0.7, 0.78), "y1": 1.0, "x0": dx - dw / 2, "x1": dx + dw / 2})
    return {"style": "facades", "rects": rects, "stripe": float(rng.uniform(0.04, 0.09)),
            "texture_seed": int(rng.integers(2 ** 31))}


def _facade_classes(scene, size):
    yy, xx = _grid(size)
    yy, xx = yy / size, xx / size
    cls = np.zeros((size, size), dtype=np.int64)
    for r in scene["rects"]:
        inside = (yy >= r["y0"]) & (yy < r["y1"]) & (xx >= r["x0"]) & (xx < r["x1"])
        cls[inside] = 1 if r["cls"] == "window" else 2
    return cls


def _facade_input(scene, size):
    rng = np.random.default_rng(scene["texture_seed"])
    yy, _ = _grid(size)
    base = rng.uniform((0.55, 0.25, 0.15), (0.8, 0.4, 0.25))[:, None, None]
    stripes = (np.floor(yy / (scene["stripe"] * size)) % 2)[None]
    img = base * (0.85 + 0.15 * stripes) + rng.normal(0.0, 0.03, size=(3, size, size))
    cls = _facade_classes(scene, size)
    glass = rng.uniform((0.2, 0.25, 0.3), (0.35, 0.4, 0.5))
    wood = rng.uniform((0.25, 0.15, 0.05), (0.4, 0.25, 0.1))
    for k, colour in ((1, glass), (2, wood)):
        sel = cls == k
        img[:, sel] = np.asarray(colour)[:, None] + rng.normal(0.0, 0.02, size=(3, int(sel.sum())))
    return np.clip(img, 0.0, 1.0)


def _facade_label(scene, size):
    cls = _facade_classes(scene, size)
    palette = np.array([FACADE_COLOURS["background"], FACADE_COLOURS["window"], FACADE_COLOURS["door"]])
    return palette[cls].transpose(2, 0, 1)


_SCENES = {"roads": _road_scene, "facades": _facade_scene}
_INPUTS = {"roads": _road_input, "facades": _facade_input}
_LABELS = {"roads": _road_label, "facades": _facade_label}


def render_input(scene: dict, size: int) -> np.ndarray:
    return _INPUTS[scene["style"]](scene, size)


def render_label(scene: dict, size: int) -> np.ndarray:
    return _LABELS[scene["style"]](scene, size)


def synth_pairs(seed: int, n: int, size: int = 32, style: str = "roads", domain_id: int | None = None,
                split: str = "train") -> ImageDataset:
    """``n`` procedurally generated (input, target) image pairs, values in [0, 1]."""
    if style not in STYLES:
        raise ContractError(f"unknown synthetic style {style!r}; choose from {STYLES}")
    if size < 4 or size & (size - 1):
        raise ContractError(f"size must be a power of two >= 4, got {size}")
    rng = named_rng(seed, f"synth.{style}.{split}")
    scenes = [_SCENES[style](rng) for _ in range(n)]
    images = np.zeros((n, 3, size, size), dtype=np.float32)
    labels = np.zeros((n, 3, size, size), dtype=np.float32)
    for k, scene in enumerate(scenes):
        images[k] = render_input(scene, size)
        labels[k] = render_label(scene, size)
    if domain_id is None:
        domain_id = STYLES.index(style)
    return ImageDataset(style, domain_id, images, labels, split=split, n_classes=None,
                        meta={"scenes": scenes, "size": size})
