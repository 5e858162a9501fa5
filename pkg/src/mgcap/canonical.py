"""Canonical-appearance pooling over rotated instances and granularity fusion.

Within one granularity every rotated copy of the input runs through the same
backbone; the per-branch SPD matrices are combined by an element-wise max
that remembers which branch won each entry.  Granularities are fused by an
arithmetic mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.transforms import center_crop, pad_rotate_resize
from .errors import DimensionMismatch


@dataclass(frozen=True)
class TransformSet:
    """Rotations by ``j * 360 / count`` degrees, ``j = 0 .. count - 1``."""

    count: int = 12

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("transform count must be positive")

    @property
    def angles_deg(self) -> np.ndarray:
        return np.arange(self.count) * (360.0 / self.count)


@dataclass(frozen=True)
class GranularitySpec:
    """Central-crop side fractions, coarse (whole image) to fine."""

    crop_ratios: tuple[float, ...] = (1.0, 0.75, 0.5)

    def __post_init__(self):
        r = tuple(float(x) for x in self.crop_ratios)
        object.__setattr__(self, "crop_ratios", r)
        if not r:
            raise ValueError("need at least one granularity")
        if any(not 0.0 < x <= 1.0 for x in r):
            raise ValueError(f"crop ratios must lie in (0, 1]: {r}")
        if any(b >= a for a, b in zip(r, r[1:])):
            raise ValueError(f"crop ratios must be strictly decreasing: {r}")

    @property
    def levels(self) -> int:
        return len(self.crop_ratios)


def render_branches(image: np.ndarray, transforms: TransformSet, ratios, input_size: int) -> np.ndarray:
    """All branch inputs for one image: ``(S, |Phi|, input_size, input_size, C)``."""
    out = []
    for ratio in ratios:
        crop = center_crop(image, ratio)
        out.append([pad_rotate_resize(crop, a, input_size) for a in transforms.angles_deg])
    return np.asarray(out)


@dataclass
class MaxoutCache:
    argmax_index: np.ndarray
    branch_count: int

    @property
    def dominance(self) -> np.ndarray:
        """Per-branch count of matrix entries won (last axis indexes branches)."""
        idx = self.argmax_index.reshape(self.argmax_index.shape[:-2] + (-1,))
        return np.stack([(idx == k).sum(axis=-1) for k in range(self.branch_count)], axis=-1)


def maxout(branches, axis: int = 0) -> tuple[np.ndarray, MaxoutCache]:
    """Element-wise max over the branch axis; ties go to the lowest index.

    The result is symmetric whenever the branches are, but it need not be
    positive definite.
    """
    if isinstance(branches, (list, tuple)):
        if not branches:
            raise DimensionMismatch("maxout needs at least one branch")
        shapes = {np.shape(b) for b in branches}
        if len(shapes) != 1:
            raise DimensionMismatch(f"branches disagree in shape: {sorted(shapes)}")
        stack = np.stack([np.asarray(b, dtype=np.float64) for b in branches], axis=axis)
    else:
        stack = np.asarray(branches, dtype=np.float64)
    stack = np.moveaxis(stack, axis, -3)
    arg = stack.argmax(axis=-3)
    out = np.take_along_axis(stack, arg[..., None, :, :], axis=-3)[..., 0, :, :]
    return out, MaxoutCache(arg, stack.shape[-3])


def maxout_backward(cache: MaxoutCache, upstream, axis: int = 0) -> np.ndarray:
    """Route each upstream entry to the branch that won it; returns a stack."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.argmax_index.shape:
        raise DimensionMismatch(f"upstream {upstream.shape} vs cache {cache.argmax_index.shape}")
    k = np.arange(cache.branch_count).reshape((-1, 1, 1))
    routed = np.where(cache.argmax_index[..., None, :, :] == k, upstream[..., None, :, :], 0.0)
    return np.moveaxis(routed, -3, axis)


def fuse_granularities(per_level, axis: int = 0) -> np.ndarray:
    """Arithmetic mean of the per-granularity matrices."""
    if isinstance(per_level, (list, tuple)):
        if not per_level:
            raise DimensionMismatch("need at least one granularity")
        shapes = {np.shape(m) for m in per_level}
        if len(shapes) != 1:
            raise DimensionMismatch(f"granularities disagree in shape: {sorted(shapes)}")
        per_level = np.stack(per_level, axis=axis)
    return np.asarray(per_level, dtype=np.float64).mean(axis=axis)


def fuse_granularities_backward(upstream, levels: int, axis: int = 0) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64) / levels
    return np.stack([upstream] * levels, axis=axis)


def canonical_report(caches, angles_deg=None) -> list[dict]:
    """Per granularity, the branch that won the most entries (ties: lowest index).

    ``caches`` holds one ``MaxoutCache`` per granularity for a single image.
    """
    report = []
    for level, cache in enumerate(caches):
        dom = np.asarray(cache.dominance).reshape(-1, cache.branch_count).sum(axis=0)
        idx = int(np.argmax(dom))
        entry = {"level": level, "index": idx, "dominance": dom.tolist()}
        if angles_deg is not None:
            entry["angle_deg"] = float(angles_deg[idx])
        report.append(entry)
    return report
