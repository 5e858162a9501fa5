"""Geometric preprocessing: crops, flips, zero-pad + rotate + bilinear resize.

Images are ``(H, W, C)`` float arrays.  Rotation angles are in degrees,
counter-clockwise as displayed (row 0 at the top), matching ``np.rot90``.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import CropOutOfBounds


def same_parity_side(side: int, target: float) -> int:
    """Round ``target`` to the nearest integer with the parity of ``side``.

    Centered crops and pads are only symmetric when the two sides share
    parity; exact 90-degree permutation relies on that symmetry.
    """
    k = int(round(target))
    if (k - side) % 2:
        k = k + 1 if target >= k else k - 1
    return max(1 if side % 2 else 2, min(side, k))


def center_crop(img: np.ndarray, ratio: float) -> np.ndarray:
    if not 0.0 < ratio <= 1.0:
        raise CropOutOfBounds(f"crop ratio {ratio} outside (0, 1]")
    h, w = img.shape[:2]
    ch = same_parity_side(h, h * ratio)
    cw = same_parity_side(w, w * ratio)
    top = (h - ch) // 2
    left = (w - cw) // 2
    return img[top:top + ch, left:left + cw]


def center_crop_to(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if size > min(h, w) or size < 1:
        raise CropOutOfBounds(f"crop {size} does not fit {h}x{w}")
    top = (h - size) // 2
    left = (w - size) // 2
    return img[top:top + size, left:left + size]


def square(img: np.ndarray) -> np.ndarray:
    """Central square crop; a no-op for square images."""
    return center_crop_to(img, min(img.shape[:2]))


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    if size > h or size > w or size < 1:
        raise CropOutOfBounds(f"crop {size} does not fit {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top:top + size, left:left + size]


def hflip(img: np.ndarray, rng: np.random.Generator | None = None, *,
          force: bool | None = None) -> np.ndarray:
    """Mirror left-right with probability 0.5, or unconditionally via ``force``."""
    flip = force if force is not None else bool(rng.random() < 0.5)
    return img[:, ::-1] if flip else img


def padded_side(side: int, keep_parity: bool = True) -> int:
    """Side of the zero-padded frame that holds the image under any rotation.

    ``ceil(side * sqrt(2))``, bumped by one when ``keep_parity`` and the
    parity differs from ``side`` so the padding stays symmetric.
    """
    p = math.ceil(side * math.sqrt(2.0) - 1e-9)
    if keep_parity and (p - side) % 2:
        p += 1
    return p


def zero_pad(img: np.ndarray, side: int) -> np.ndarray:
    h, w = img.shape[:2]
    if side < max(h, w):
        raise CropOutOfBounds(f"pad side {side} smaller than image {h}x{w}")
    top = (side - h) // 2
    left = (side - w) // 2
    out = np.zeros((side, side) + img.shape[2:], dtype=np.float64)
    out[top:top + h, left:left + w] = img
    return out


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional pixel coordinates, zero outside the frame."""
    h, w = img.shape[:2]
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0
    out = np.zeros(ys.shape + img.shape[2:], dtype=np.float64)
    for dy, fy in ((0, 1.0 - wy), (1, wy)):
        for dx, fx in ((0, 1.0 - wx), (1, wx)):
            yy = y0 + dy
            xx = x0 + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            wgt = np.where(ok, fy * fx, 0.0)
            vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += wgt[..., None] * vals if img.ndim == 3 else wgt * vals
    return out


def rotate(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate a square frame about its center; multiples of 90 are exact."""
    k, rem = divmod(float(angle_deg) % 360.0, 90.0)
    if rem == 0.0:
        return np.ascontiguousarray(np.rot90(img, int(k), axes=(0, 1)))
    h, w = img.shape[:2]
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    # inverse map: output pixel pulls from the source rotated back by t
    src_x = c * xx - s * yy + cx
    src_y = s * xx + c * yy + cy
    return bilinear_sample(img, src_y, src_x)


def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int | None = None) -> np.ndarray:
    """Bilinear resize with half-pixel centers."""
    out_w = out_h if out_w is None else out_w
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.astype(np.float64, copy=True)
    ry = _resize_weights(h, out_h)
    rx = _resize_weights(w, out_w)
    return np.einsum("ah,hwc,bw->abc", ry, img.reshape(h, w, -1), rx).reshape(
        (out_h, out_w) + img.shape[2:])


def pad_rotate_resize(img: np.ndarray, angle_deg: float, out_size: int,
                      keep_parity: bool = True) -> np.ndarray:
    """Zero-pad a square image to its rotation-safe frame, rotate, resize."""
    h, w = img.shape[:2]
    if h != w:
        raise CropOutOfBounds(f"pad_rotate_resize needs a square image, got {h}x{w}")
    padded = zero_pad(img, padded_side(h, keep_parity))
    return resize_bilinear(rotate(padded, angle_deg), out_size)
