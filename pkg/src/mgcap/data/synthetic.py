"""Synthetic rotated-texture dataset.

Every sample is an analytic texture rendered under a uniformly random global
rotation, so a classifier that is not rotation invariant has to learn each
class at every orientation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import DatasetManifest, Record, split, write_manifest
from .ppm import save_ppm, to_uint8

CLASS_NAMES = (
    "stripes_fine",
    "stripes_medium",
    "stripes_coarse",
    "checker_small",
    "checker_large",
    "rings",
    "blobs",
    "crosshatch",
)

# periods as a fraction of the image side
_STRIPE_PERIODS = (1 / 10, 1 / 6.5, 1 / 4)
_CHECKER_PERIODS = (1 / 7, 1 / 3.5)
_RING_PERIOD = 1 / 7
_HATCH_PERIOD = 1 / 5


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    samples_per_class: int = 200
    image_size: int = 64
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(CLASS_NAMES):
            raise ValueError(f"num_classes must be in [1, {len(CLASS_NAMES)}]")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")


def _pattern(label: int, u: np.ndarray, v: np.ndarray, size: int,
             rng: np.random.Generator) -> np.ndarray:
    jitter = rng.uniform(0.92, 1.08)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    if label <= 2:
        period = _STRIPE_PERIODS[label] * size * jitter
        return np.sin(2.0 * math.pi * u / period + phase)
    if label <= 4:
        period = _CHECKER_PERIODS[label - 3] * size * jitter
        phase2 = rng.uniform(0.0, 2.0 * math.pi)
        a = np.sin(2.0 * math.pi * u / period + phase)
        b = np.sin(2.0 * math.pi * v / period + phase2)
        return np.tanh(4.0 * a * b)
    if label == 5:
        period = _RING_PERIOD * size * jitter
        cu, cv = rng.uniform(-0.15, 0.15, size=2) * size
        r = np.hypot(u - cu, v - cv)
        return np.cos(2.0 * math.pi * r / period + phase)
    if label == 6:
        field = np.full(u.shape, -1.0)
        sigma = size / 14.0 * jitter
        for cu, cv in rng.uniform(-0.6, 0.6, size=(9, 2)) * size:
            field += 2.0 * np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2.0 * sigma ** 2))
        return np.clip(field, -1.0, 1.0)
    period = _HATCH_PERIOD * size * jitter
    offs = rng.uniform(0.0, period, size=2)
    width = period / 9.0

    def lines(t, off):
        d = np.abs(((t + off) % period) - period / 2.0)
        return np.exp(-(d ** 2) / (2.0 * width ** 2))

    return 2.0 * np.maximum(lines(u, offs[0]), lines(v, offs[1])) - 1.0


def render_sample(spec: SyntheticSpec, label: int, index: int) -> np.ndarray:
    """Render one grayscale ``(S, S, 1)`` sample; fully determined by its arguments."""
    rng = np.random.default_rng([spec.seed, label, index])
    size = spec.image_size
    angle = rng.uniform(0.0, 2.0 * math.pi)
    c = (size - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(size) - c, np.arange(size) - c, indexing="ij")
    u = math.cos(angle) * xx + math.sin(angle) * yy
    v = -math.sin(angle) * xx + math.cos(angle) * yy
    img = 0.5 + 0.35 * _pattern(label, u, v, size, rng)
    img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)[:, :, None]


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path, train_ratio: float = 0.5,
                       split_seed: int = 0) -> DatasetManifest:
    """Write every sample as PGM under ``out_dir`` plus ``manifest.csv``."""
    out = Path(out_dir)
    records = []
    for label in range(spec.num_classes):
        class_dir = out / CLASS_NAMES[label]
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(spec.samples_per_class):
            rel = f"{CLASS_NAMES[label]}/{i:05d}.pgm"
            save_ppm(out / rel, to_uint8(render_sample(spec, label, i)))
            records.append(Record(rel, label, "train"))
    manifest = DatasetManifest(records, list(CLASS_NAMES[:spec.num_classes]), split_seed)
    manifest = split(manifest, train_ratio, split_seed)
    write_manifest(manifest, out / "manifest.csv")
    return manifest
