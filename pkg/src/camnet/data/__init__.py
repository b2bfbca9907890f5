"""Datasets: IDX/PNG loading, augmentation, joint interleaving, synthetic pairs."""

from camnet.data.augment import AugmentConfig, augment, augment_batch, sample_params, warp
from camnet.data.dataset import ImageDataset, load_png_dir
from camnet.data.idx import encode_idx, find_idx_pair, load_idx, parse_idx, read_idx, save_idx, write_idx
from camnet.data.joint import JointDataset, make_joint
from camnet.data.synth import STYLES, render_input, render_label, synth_pairs

__all__ = [
    "AugmentConfig", "augment", "augment_batch", "sample_params", "warp", "ImageDataset", "load_png_dir",
    "encode_idx", "find_idx_pair", "load_idx", "parse_idx", "read_idx", "save_idx", "write_idx",
    "JointDataset", "make_joint", "STYLES", "render_input", "render_label", "synth_pairs",
]
