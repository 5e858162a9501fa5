"""Second-order pooling: covariance, Gaussian embedding and trace ridge.

All functions accept a single matrix or a leading batch axis.  Feature
matrices are laid out channels-first, ``(..., C', N)``, so column ``n`` is the
feature vector at spatial location ``n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DimensionMismatch
from .linalg import sym

LAMBDA_DEFAULT = 1e-4


@dataclass(frozen=True)
class SopConfig:
    lam: float = LAMBDA_DEFAULT
    use_gaussian: bool = True
    mean_convention: Literal["mean", "sum"] = "mean"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.mean_convention not in ("mean", "sum"):
            raise ValueError(f"unknown mean convention {self.mean_convention!r}")

    def output_order(self, channels: int) -> int:
        return channels + 1 if self.use_gaussian else channels


def _features(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim < 2 or f.shape[-1] < 1 or f.shape[-2] < 1:
        raise DimensionMismatch(f"feature matrix must be (..., C', N), got {f.shape}")
    return f


def covariance(f) -> np.ndarray:
    """``F Ibar F^T`` with ``Ibar = (I - 11^T/N) / N``."""
    f = _features(f)
    n = f.shape[-1]
    fc = f - f.mean(axis=-1, keepdims=True)
    return sym(fc @ np.swapaxes(fc, -1, -2) / n)


def covariance_backward(f, upstream) -> np.ndarray:
    f = _features(f)
    upstream = np.asarray(upstream, dtype=np.float64)
    c = f.shape[-2]
    if upstream.shape[-2:] != (c, c):
        raise DimensionMismatch(f"upstream {upstream.shape} does not match {c} channels")
    n = f.shape[-1]
    # F Ibar == (F - row means) / N
    fc = (f - f.mean(axis=-1, keepdims=True)) / n
    return (upstream + np.swapaxes(upstream, -1, -2)) @ fc


def feature_mean(f, convention: str = "mean") -> np.ndarray:
    f = _features(f)
    return f.mean(axis=-1) if convention == "mean" else f.sum(axis=-1)


def feature_mean_backward(f, upstream_mu, convention: str = "mean") -> np.ndarray:
    f = _features(f)
    w = 1.0 / f.shape[-1] if convention == "mean" else 1.0
    return np.broadcast_to(np.asarray(upstream_mu)[..., :, None] * w, f.shape).copy()


def gaussian_embed(c, mu) -> np.ndarray:
    """Lift ``(mu, C)`` to the block matrix ``[[C + mu mu^T, mu], [mu^T, 1]]``."""
    c = np.asarray(c, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    k = c.shape[-1]
    if c.shape[-2] != k or mu.shape[-1] != k or mu.shape[:-1] != c.shape[:-2]:
        raise DimensionMismatch(f"covariance {c.shape} and mean {mu.shape} disagree")
    out = np.zeros(c.shape[:-2] + (k + 1, k + 1))
    out[..., :k, :k] = c + mu[..., :, None] * mu[..., None, :]
    out[..., :k, k] = mu
    out[..., k, :k] = mu
    out[..., k, k] = 1.0
    return out


def gaussian_embed_backward(c, mu, upstream) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(c, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    k = c.shape[-1]
    if upstream.shape[-2:] != (k + 1, k + 1):
        raise DimensionMismatch(f"upstream {upstream.shape} must have order {k + 1}")
    ul = upstream[..., :k, :k]
    d_c = sym(ul)
    d_mu = ((ul + np.swapaxes(ul, -1, -2)) @ mu[..., None])[..., 0]
    d_mu = d_mu + upstream[..., :k, k] + upstream[..., k, :k]
    return d_c, d_mu


def trace_ridge(g, lam: float) -> np.ndarray:
    """``G + lam * trace(G) * I``."""
    g = np.asarray(g, dtype=np.float64)
    tr = np.trace(g, axis1=-2, axis2=-1)
    return g + (lam * tr)[..., None, None] * np.eye(g.shape[-1])


def trace_ridge_backward(g, lam: float, upstream) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64)
    tr = np.trace(upstream, axis1=-2, axis2=-1)
    return upstream + (lam * tr)[..., None, None] * np.eye(upstream.shape[-1])


@dataclass
class PoolCache:
    features: np.ndarray
    cov: np.ndarray
    mu: np.ndarray | None
    embedded: np.ndarray


def pool_forward(f, cfg: SopConfig) -> tuple[np.ndarray, PoolCache]:
    """Features -> covariance -> (Gaussian embedding) -> trace ridge."""
    f = _features(f)
    c = covariance(f)
    if cfg.use_gaussian:
        mu = feature_mean(f, cfg.mean_convention)
        g = gaussian_embed(c, mu)
    else:
        mu = None
        g = c
    return trace_ridge(g, cfg.lam), PoolCache(f, c, mu, g)


def pool_backward(cache: PoolCache, upstream, cfg: SopConfig) -> np.ndarray:
    d_g = trace_ridge_backward(cache.embedded, cfg.lam, upstream)
    if not cfg.use_gaussian:
        return covariance_backward(cache.features, d_g)
    d_c, d_mu = gaussian_embed_backward(cache.cov, cache.mu, d_g)
    return (covariance_backward(cache.features, d_c)
            + feature_mean_backward(cache.features, d_mu, cfg.mean_convention))
