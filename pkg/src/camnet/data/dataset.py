"""In-memory image datasets."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from camnet.errors import ConsistencyError, ContractError


@dataclass
class ImageDataset:
    """Images (N, C, H, W) in [0, 1] with class indices or target images.

    ``labels`` is a 1-D integer array for classification and an array shaped
    like ``images`` for image-to-image data.
    """

    name: str
    domain_id: int
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    n_classes: int | None = 10
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError(f"{self.name}: {len(self.images)} images vs {len(self.labels)} labels")
        if self.images.ndim != 4 and len(self.images):
            raise ContractError(f"{self.name}: images must be (N, C, H, W), got {self.images.shape}")

    def __len__(self):
        return len(self.images)

    @property
    def is_classification(self) -> bool:
        return self.labels.ndim == 1

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    @property
    def domains(self) -> np.ndarray:
        return np.full(len(self), self.domain_id, dtype=np.int64)

    def subset(self, n: int, rng=None) -> "ImageDataset":
        """First ``n`` samples, or a random ``n``-subset when ``rng`` is given."""
        n = min(n, len(self))
        idx = np.arange(n) if rng is None else np.sort(rng.choice(len(self), size=n, replace=False))
        return self.take(idx)

    def take(self, idx) -> "ImageDataset":
        return ImageDataset(self.name, self.domain_id, self.images[idx], self.labels[idx], self.split,
                            self.n_classes, dict(self.meta))

    def with_domain(self, domain_id: int) -> "ImageDataset":
        return ImageDataset(self.name, domain_id, self.images, self.labels, self.split, self.n_classes,
                            dict(self.meta))

    def validate(self) -> None:
        if len(self) and (self.images.min() < 0 or self.images.max() > 1):
            raise ContractError(f"{self.name}: pixel values outside [0, 1]")
        if self.is_classification and self.n_classes is not None and len(self):
            if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
                raise ContractError(f"{self.name}: class index outside [0, {self.n_classes})")


def load_png_dir(root, name: str | None = None, domain_id: int = 0, split: str = "train",
                 grayscale: bool = True) -> ImageDataset:
    """Read ``<root>/<class>/<file>.png``; classes are the sorted sub-directory names."""
    from PIL import Image

    classes = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not classes:
        raise ContractError(f"{root}: no class directories")
    images, labels = [], []
    for label, cls in enumerate(classes):
        folder = os.path.join(root, cls)
        for fname in sorted(os.listdir(folder)):
            if not fname.lower().endswith(".png"):
                continue
            with Image.open(os.path.join(folder, fname)) as im:
                im = im.convert("L" if grayscale else "RGB")
                arr = np.asarray(im, dtype=np.float32) / np.float32(255.0)
            images.append(arr[None] if grayscale else arr.transpose(2, 0, 1))
            labels.append(label)
    if not images:
        raise ContractError(f"{root}: no PNG files found")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ConsistencyError(f"{root}: images have differing shapes {sorted(shapes)[:3]}")
    return ImageDataset(name or os.path.basename(os.path.normpath(root)), domain_id, np.stack(images),
                        np.asarray(labels, dtype=np.int64), split, n_classes=len(classes),
                        meta={"classes": classes})
