"""Image ingestion, geometric preprocessing and the synthetic texture dataset."""
from .manifest import (DatasetManifest, Record, load_images, read_manifest, repeated_splits,
                       split, write_manifest)
from .ppm import decode, encode, load_ppm, save_ppm
from .synthetic import CLASS_NAMES, SyntheticSpec, generate_synthetic, render_sample
from .transforms import (center_crop, center_crop_to, hflip, pad_rotate_resize, padded_side,
                         random_crop, resize_bilinear, rotate, zero_pad)

__all__ = [
    "CLASS_NAMES", "DatasetManifest", "Record", "SyntheticSpec", "center_crop", "center_crop_to",
    "decode", "encode", "generate_synthetic", "hflip", "load_images", "load_ppm",
    "pad_rotate_resize", "padded_side", "random_crop", "read_manifest", "render_sample",
    "repeated_splits", "resize_bilinear", "rotate", "save_ppm", "split", "write_manifest",
    "zero_pad",
]
