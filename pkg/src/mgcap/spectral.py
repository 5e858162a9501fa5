"""EIG-based normalization of SPD descriptors and its hand-derived backward pass.

Forward: ``G = U diag(nu) U^T``, clamp the spectrum into ``[eps_lo, eps_hi]``
(one decomposition per call), then rebuild ``U g(R) U^T`` with ``g`` the
matrix logarithm or square root.

Backward: with ``S`` the symmetric part of the upstream gradient,

    dL/dU     = 2 S U g(R)
    dL/dSigma = mask * g'(R) * diag(U^T S U)
    dL/dG     = U ((Q^T o (U^T dL/dU)) + diag(dL/dSigma))_sym U^T

where ``Q(i, j) = 1 / (nu_i - nu_j)`` off the diagonal and zero wherever
the two eigenvalues coincide to within ``degeneracy_tol``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DimensionMismatch
from .linalg import EigSystem, sym, sym_eig_stack

EPS_LO = 1e-5
EPS_HI = 1e5
DEGENERACY_TOL = 1e-10

NormalizationMode = Literal["log_e", "sqrt_e", "identity"]
MODES = ("log_e", "sqrt_e", "identity")


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown normalization mode {mode!r}; expected one of {MODES}")
    return mode


def spectrum_map(mode: str, r: np.ndarray) -> np.ndarray:
    if mode == "log_e":
        return np.log(r)
    if mode == "sqrt_e":
        return np.sqrt(r)
    return r.copy()


def spectrum_map_grad(mode: str, r: np.ndarray) -> np.ndarray:
    if mode == "log_e":
        return 1.0 / r
    if mode == "sqrt_e":
        return 0.5 / np.sqrt(r)
    return np.ones_like(r)


@dataclass(frozen=True)
class RectifiedSpectrum:
    values: np.ndarray
    mask: np.ndarray
    eps_lo: float
    eps_hi: float


def rectify(eigvals, eps_lo: float = EPS_LO, eps_hi: float = EPS_HI) -> RectifiedSpectrum:
    """Clamp eigenvalues into ``[eps_lo, eps_hi]``.

    ``mask`` is 1 where the eigenvalue lies strictly inside the clip range and
    the clamp is the identity; the backward pass passes gradient only there.
    """
    if not eps_hi > eps_lo > 0:
        raise ValueError("need eps_hi > eps_lo > 0")
    if isinstance(eigvals, EigSystem):
        eigvals = eigvals.eigvals
    nu = np.asarray(eigvals, dtype=np.float64)
    values = np.clip(nu, eps_lo, eps_hi)
    mask = ((nu > eps_lo) & (nu < eps_hi)).astype(np.float64)
    return RectifiedSpectrum(values, mask, eps_lo, eps_hi)


def loewner_matrix(eigvals, degeneracy_tol: float = DEGENERACY_TOL) -> np.ndarray:
    """``Q(i, j) = 1 / (nu_i - nu_j)``, zeroed on the diagonal and at near-ties."""
    nu = np.asarray(eigvals, dtype=np.float64)
    diff = nu[..., :, None] - nu[..., None, :]
    scale = np.maximum(1.0, np.maximum(np.abs(nu)[..., :, None], np.abs(nu)[..., None, :]))
    degenerate = np.abs(diff) < degeneracy_tol * scale
    with np.errstate(divide="ignore"):
        q = np.where(degenerate, 0.0, 1.0 / np.where(degenerate, 1.0, diff))
    return q


@dataclass(frozen=True)
class SpectralCache:
    input: np.ndarray
    mode: str
    eig: EigSystem | None
    rect: RectifiedSpectrum | None


def normalize_forward(g, mode: str = "sqrt_e", eps_lo: float = EPS_LO,
                      eps_hi: float = EPS_HI) -> tuple[np.ndarray, SpectralCache]:
    """Normalize a symmetric matrix (or a ``(B, c, c)`` stack) through its spectrum.

    ``identity`` mode skips the decomposition and returns the input unchanged.
    """
    check_mode(mode)
    g = np.asarray(g, dtype=np.float64)
    if g.ndim < 2 or g.shape[-1] != g.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got {g.shape}")
    if mode == "identity":
        return g.copy(), SpectralCache(g, mode, None, None)
    stack = g.reshape((-1,) + g.shape[-2:])
    vals, vecs = sym_eig_stack(sym(stack))
    vals = vals.reshape(g.shape[:-1])
    vecs = vecs.reshape(g.shape)
    rect = rectify(vals, eps_lo, eps_hi)
    fr = spectrum_map(mode, rect.values)
    out = sym((vecs * fr[..., None, :]) @ np.swapaxes(vecs, -1, -2))
    return out, SpectralCache(g, mode, EigSystem(vals, vecs), rect)


def normalize_backward(cache: SpectralCache, upstream,
                       degeneracy_tol: float = DEGENERACY_TOL) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.input.shape:
        raise DimensionMismatch(f"upstream {upstream.shape} vs input {cache.input.shape}")
    s = sym(upstream)
    if cache.mode == "identity":
        return s
    u = cache.eig.eigvecs
    ut = np.swapaxes(u, -1, -2)
    r = cache.rect.values
    g = spectrum_map(cache.mode, r)
    dg = spectrum_map_grad(cache.mode, r) * cache.rect.mask

    d_u = 2.0 * (s @ u) * g[..., None, :]
    s_hat_diag = np.einsum("...ji,...jk,...ki->...i", u, s, u)
    d_sigma = dg * s_hat_diag

    q = loewner_matrix(cache.eig.eigvals, degeneracy_tol)
    inner = np.swapaxes(q, -1, -2) * (ut @ d_u)
    idx = np.arange(r.shape[-1])
    inner[..., idx, idx] += d_sigma
    return sym(u @ sym(inner) @ ut)
