"""Joint datasets: several domains interleaved block by block."""

from __future__ import annotations

import numpy as np

from camnet.errors import ConsistencyError, ContractError


class JointDataset:
    """Round-robin interleave of ``fraction``-sized chunks of each part.

    ``images``/``labels``/``domains`` are the parts concatenated in order;
    :meth:`order` gives the interleaved sample sequence over those arrays.
    """

    def __init__(self, parts, fraction: float = 0.05):
        if not 0 < fraction <= 1:
            raise ContractError(f"fraction must be in (0, 1], got {fraction}")
        if not parts:
            raise ContractError("a joint dataset needs at least one part")
        shapes = {p.image_shape for p in parts if len(p)}
        if len(shapes) > 1:
            raise ConsistencyError(f"incompatible image shapes {sorted(shapes)}")
        kinds = {p.is_classification for p in parts}
        if len(kinds) > 1:
            raise ConsistencyError("cannot mix classification and image-to-image parts")
        if all(p.is_classification for p in parts):
            classes = {p.n_classes for p in parts}
            if len(classes) > 1:
                raise ConsistencyError(f"parts disagree on the number of classes: {sorted(classes)}")
        self.parts = list(parts)
        self.fraction = fraction
        self.images = np.concatenate([p.images for p in parts])
        self.labels = np.concatenate([p.labels for p in parts])
        self.domains = np.concatenate([p.domains for p in parts])
        self.offsets = np.cumsum([0] + [len(p) for p in parts])[:-1]
        self.name = "+".join(p.name for p in parts)
        self.n_classes = parts[0].n_classes

    def __len__(self):
        return len(self.images)

    @property
    def is_classification(self):
        return self.parts[0].is_classification

    @property
    def image_shape(self):
        return self.parts[0].image_shape

    def block_sizes(self):
        return [max(1, int(round(self.fraction * len(p)))) for p in self.parts]

    def blocks(self, rng=None):
        """Interleaved list of (part index, global sample indices) blocks.

        With ``rng`` each part is permuted before chunking; otherwise the
        parts keep their stored order.
        """
        queues = []
        for k, part in enumerate(self.parts):
            idx = np.arange(len(part)) if rng is None else rng.permutation(len(part))
            size = self.block_sizes()[k]
            chunks = [self.offsets[k] + idx[s:s + size] for s in range(0, len(part), size)]
            queues.append(chunks)
        out = []
        depth = max((len(q) for q in queues), default=0)
        for r in range(depth):
            for k, q in enumerate(queues):
                if r < len(q):
                    out.append((k, q[r]))
        return out

    def order(self, rng=None) -> np.ndarray:
        blocks = self.blocks(rng)
        if not blocks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([b for _, b in blocks]).astype(np.int64)

    def split_by_domain(self):
        return {p.domain_id: p for p in self.parts}


def make_joint(datasets, fraction: float = 0.05) -> JointDataset:
    """Interleave datasets; each keeps its own ``domain_id``."""
    return JointDataset(list(datasets), fraction)
