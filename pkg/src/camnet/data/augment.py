"""Random shift / rotation / scaling with bilinear resampling.

Pixels mapped from outside the frame are zero; nothing is reflected or
extended.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from camnet.errors import ContractError


@dataclass
class AugmentConfig:
    shift_px: int = 2
    rotate_deg: float = 10.0
    scale_range: tuple = (0.9, 1.1)
    enabled: bool = True

    def __post_init__(self):
        lo, hi = self.scale_range
        if not lo <= 1.0 <= hi:
            raise ContractError(f"scale range must bracket 1, got {self.scale_range}")
        if self.shift_px < 0:
            raise ContractError(f"shift_px must be >= 0, got {self.shift_px}")
        if self.rotate_deg < 0:
            raise ContractError(f"rotate_deg must be >= 0, got {self.rotate_deg}")


def warp(img: np.ndarray, dx: float = 0.0, dy: float = 0.0, angle_deg: float = 0.0,
         scale: float = 1.0) -> np.ndarray:
    """Translate by (dx columns, dy rows), rotate and scale about the centre.

    ``img`` is (C, H, W) or (H, W).
    """
    arr = np.asarray(img)
    planes = arr[None] if arr.ndim == 2 else arr
    h, w = planes.shape[-2:]
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    t = np.deg2rad(angle_deg)
    fwd = scale * np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    inv = np.linalg.inv(fwd)
    # output o comes from input inv @ (o - centre - shift) + centre
    offset = centre - inv @ (centre + np.array([dy, dx]))
    out = np.empty(planes.shape, dtype=planes.dtype)
    for c in range(planes.shape[0]):
        out[c] = ndimage.affine_transform(planes[c], inv, offset=offset, order=1, mode="constant", cval=0.0,
                                          prefilter=False)
    np.clip(out, 0.0, 1.0, out=out)
    return out[0] if arr.ndim == 2 else out


def sample_params(cfg: AugmentConfig, rng) -> dict:
    lo, hi = cfg.scale_range
    return {
        "dx": rng.uniform(-cfg.shift_px, cfg.shift_px),
        "dy": rng.uniform(-cfg.shift_px, cfg.shift_px),
        "angle_deg": rng.uniform(-cfg.rotate_deg, cfg.rotate_deg),
        "scale": rng.uniform(lo, hi),
    }


def augment(img: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    """One random augmentation of a (C, H, W) image; identity when disabled."""
    if not cfg.enabled:
        return img
    return warp(img, **sample_params(cfg, rng))


def augment_batch(images: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    if not cfg.enabled:
        return images
    return np.stack([augment(im, cfg, rng) for im in images]) if len(images) else images
