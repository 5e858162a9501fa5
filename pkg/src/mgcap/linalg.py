"""Dense matrix helpers and a deterministic cyclic-Jacobi symmetric eigensolver.

Matrices are plain ``float64`` numpy arrays.  Functions that accept a stack of
matrices say so; everything else expects a single 2-D array.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .errors import DimensionMismatch, NonConvergence, NonFinite, NotSymmetric

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12
SYM_TOL = 1e-10
# Components smaller than this are skipped when fixing eigenvector signs.
SIGN_TOL = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFinite(f"{name} has non-finite entries")
    return m


def is_symmetric(m: np.ndarray, tol: float = SYM_TOL) -> bool:
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        return False
    mt = np.swapaxes(m, -1, -2)
    return bool(np.all(np.abs(m - mt) <= tol * np.maximum(1.0, np.abs(m))))


def as_sym(a, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    if not is_symmetric(m):
        raise NotSymmetric(f"{name} is not symmetric")
    return m


def sym(m: np.ndarray) -> np.ndarray:
    """Symmetric part ``(M + M^T) / 2``; works on stacks."""
    return 0.5 * (m + np.swapaxes(m, -1, -2))


@dataclass(frozen=True)
class EigSystem:
    """Eigenpairs of a symmetric matrix, eigenvalues in non-increasing order."""

    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def order(self) -> int:
        return self.eigvals.shape[-1]


@njit(cache=True)
def _jacobi_inplace(a, v, tol, max_sweeps):
    n = a.shape[0]
    norm = 0.0
    for i in range(n):
        for j in range(n):
            norm += a[i, j] * a[i, j]
    norm = np.sqrt(norm)
    converged_at = -1
    for sweep in range(max_sweeps + 1):
        if converged_at >= 0:
            return converged_at
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += 2.0 * a[p, q] * a[p, q]
        if np.sqrt(off) <= tol * norm:
            # one more sweep flushes the residue left under the tolerance;
            # the residue is not smooth in the input and spoils finite differences
            converged_at = sweep
            if off == 0.0:
                return sweep
        elif sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return converged_at


@njit(cache=True)
def _jacobi_batch(mats, tol, max_sweeps, sign_tol):
    b, n, _ = mats.shape
    vals = np.empty((b, n))
    vecs = np.empty((b, n, n))
    status = np.empty(b, dtype=np.int64)
    for i in range(b):
        a = mats[i].copy()
        v = np.eye(n)
        status[i] = _jacobi_inplace(a, v, tol, max_sweeps)
        w = np.empty(n)
        for k in range(n):
            w[k] = a[k, k]
        # stable sort, non-increasing
        order = np.argsort(-w, kind="mergesort")
        for k in range(n):
            src = order[k]
            vals[i, k] = w[src]
            sgn = 1.0
            for r in range(n):
                if abs(v[r, src]) > sign_tol:
                    if v[r, src] < 0.0:
                        sgn = -1.0
                    break
            for r in range(n):
                vecs[i, r, k] = sgn * v[r, src]
    return vals, vecs, status


def sym_eig_stack(mats: np.ndarray, max_sweeps: int = JACOBI_MAX_SWEEPS,
                  tol: float = JACOBI_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a ``(B, c, c)`` stack; returns ``(eigvals, eigvecs)``."""
    mats = np.ascontiguousarray(mats, dtype=np.float64)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise DimensionMismatch(f"expected a (B, c, c) stack, got {mats.shape}")
    if mats.shape[1] < 1:
        raise DimensionMismatch("order must be at least 1")
    if not np.all(np.isfinite(mats)):
        raise NonFinite("eigensolver input has non-finite entries")
    vals, vecs, status = _jacobi_batch(mats, tol, max_sweeps, SIGN_TOL)
    if np.any(status < 0):
        bad = int(np.flatnonzero(status < 0)[0])
        raise NonConvergence(f"Jacobi did not converge in {max_sweeps} sweeps (matrix {bad})")
    return vals, vecs


def sym_eig(m, max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigSystem:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Eigenvalues come back in non-increasing order.  Each eigenvector's first
    non-negligible component is positive, so identical input bits always give
    identical output bits.
    """
    m = as_sym(m)
    vals, vecs = sym_eig_stack(m[None], max_sweeps=max_sweeps)
    return EigSystem(vals[0], vecs[0])


def reconstruct(e: EigSystem, f: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
    """``U diag(f(nu)) U^T``, symmetrized.  ``f=None`` means identity."""
    lam = e.eigvals if f is None else np.asarray(f(e.eigvals), dtype=np.float64)
    if not np.all(np.isfinite(lam)):
        raise NonFinite("spectrum function produced non-finite values")
    u = e.eigvecs
    return sym((u * lam[..., None, :]) @ np.swapaxes(u, -1, -2))


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"matmul: {a.shape} @ {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def add(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    _check_same_shape(a, b, "add")
    return a + b


def scale(a, s: float) -> np.ndarray:
    return as_matrix(a) * float(s)


def hadamard(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    _check_same_shape(a, b, "hadamard")
    return a * b


def trace(a) -> float:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"trace of non-square {a.shape}")
    return float(np.trace(a))


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(as_matrix(a)))
