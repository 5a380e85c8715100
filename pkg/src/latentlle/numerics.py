"""Dense linear-algebra helpers: pseudo-inverse, pseudo-determinant,
Kronecker/vec algebra, PSD repair and a central-difference gradient.

Matrices are plain 2-D ``numpy`` arrays.  ``pinv`` and ``pseudo_logdet``
also accept stacks of shape ``(..., m, n)`` and operate on the last two axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import InvalidInputError, NotPSDError, NumericalError

RANK_TOL = 1e-10
PSD_TOL = 1e-8


def as_matrix(A, name="A", ndim=2) -> np.ndarray:
    """Return ``A`` as a float array, rejecting NaN/Inf and wrong rank."""
    A = np.asarray(A, dtype=float)
    if ndim is not None and A.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return A


def _check_square(A, name="A"):
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise InvalidInputError(f"{name} must be square, got shape {A.shape}")


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigen-pairs of a symmetric matrix, eigenvalues in descending order."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def of(cls, A) -> "SpectralDecomposition":
        A = as_matrix(A)
        _check_square(A)
        w, V = np.linalg.eigh(0.5 * (A + A.T))
        return cls(w[::-1].copy(), V[:, ::-1].copy())


def pinv(A, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse.

    Singular values below ``rank_tol * sigma_max`` are treated as zero.
    """
    if not rank_tol > 0:
        raise InvalidInputError("rank_tol must be positive")
    A = as_matrix(A, ndim=None)
    if A.ndim < 2:
        raise InvalidInputError(f"A must be at least 2-D, got shape {A.shape}")
    return np.linalg.pinv(A, rcond=rank_tol)


def pseudo_logdet(A, rank_tol: float = RANK_TOL, ref=None):
    """Sum of log eigenvalues above ``rank_tol * ref`` of a symmetric PSD matrix.

    ``ref`` defaults to the largest eigenvalue of ``A``; passing an external
    scale keeps numerically-zero matrices at rank zero.  The zero-rank
    matrix has pseudo-logdet 0.

    Raises
    ------
    NotPSDError
        If an eigenvalue is below ``-PSD_TOL * max(1, |lambda|_max)``.
    """
    A = as_matrix(A, ndim=None)
    _check_square(A)
    w = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    top = np.max(np.abs(w), axis=-1, keepdims=True)
    if np.any(w < -PSD_TOL * np.maximum(1.0, top)):
        raise NotPSDError("matrix is not positive semi-definite")
    scale = np.max(w, axis=-1, keepdims=True) if ref is None else np.asarray(ref, float)[..., None]
    keep = w > rank_tol * scale
    out = np.where(keep, np.log(np.where(keep, w, 1.0)), 0.0).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def numerical_rank(A, rank_tol: float = RANK_TOL, ref=None):
    """Count of eigenvalues above ``rank_tol * ref`` (symmetric input)."""
    A = as_matrix(A, ndim=None)
    w = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    scale = np.max(w, axis=-1, keepdims=True) if ref is None else np.asarray(ref, float)[..., None]
    r = np.sum(w > rank_tol * scale, axis=-1)
    return int(r) if np.ndim(r) == 0 else r


def kron(A, B) -> np.ndarray:
    """Kronecker product, shape ``(rA*rB, cA*cB)``."""
    return np.kron(as_matrix(A, "A"), as_matrix(B, "B"))


def vec(A) -> np.ndarray:
    """Column-stacking vectorization: ``vec([[1,3],[2,4]]) == [1,2,3,4]``."""
    return as_matrix(A).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != rows * cols:
        raise InvalidInputError(f"cannot reshape length {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def symmetrize_psd(A, floor: float = 0.0) -> np.ndarray:
    """Symmetric part of ``A`` with eigenvalues clamped to ``>= floor``."""
    A = as_matrix(A)
    _check_square(A)
    S = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(S)
    if w[0] >= floor:
        return S
    S = (V * np.maximum(w, floor)) @ V.T
    return 0.5 * (S + S.T)


def fd_gradient(f: Callable[[np.ndarray], float], A, h: float = 1e-6) -> np.ndarray:
    """Entrywise central-difference gradient of a scalar function of a matrix."""
    if not h > 0:
        raise InvalidInputError("h must be positive")
    A = as_matrix(A, ndim=None)
    G = np.empty_like(A)
    for idx in np.ndindex(A.shape):
        E = np.zeros_like(A)
        E[idx] = h
        fp, fm = f(A + E), f(A - E)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"objective is non-finite near entry {idx}")
        G[idx] = (fp - fm) / (2.0 * h)
    return G
