"""Deterministic LLE: regularized reconstruction weights and the bottom-eigenvector
embedding, plus the bridge that feeds stochastic weights into the same embedding."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import InvalidInputError, NumericalError
from .neighborhood import DataMatrix, NeighborhoodSystem


@dataclass(frozen=True)
class WeightMatrix:
    """Dense ``n x n`` reconstruction weights, nonzero only on the neighbor pattern."""

    W: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class EmbeddingResult:
    Y: np.ndarray
    eigenvalues: np.ndarray
    unnormalized_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def reconstruction_weights(data: DataMatrix, nbrs: NeighborhoodSystem, reg: float = 1e-3) -> WeightMatrix:
    """Solve ``(G + reg * tr(G)/k * I) w = 1`` per point and normalize to sum one.

    ``G`` is the local Gram matrix of differences ``x_i - x_j`` over the
    neighbors of ``x_i``.
    """
    if reg < 0:
        raise InvalidInputError("reg must be >= 0")
    n, k = data.n, nbrs.k
    W = np.zeros((n, n))
    ones = np.ones(k)
    for i in range(n):
        idx = nbrs.neighbor_indices[i]
        Z = data.points[i] - data.points[idx]           # (k, d)
        G = Z @ Z.T
        A = G + (reg * np.trace(G) / k) * np.eye(k)
        if np.linalg.matrix_rank(A) < k:
            hint = " use reg > 0" if reg == 0 else " neighbors coincide with the point"
            raise NumericalError(f"local Gram system for point {i} is singular;{hint}")
        w = np.linalg.solve(A, ones)
        W[i, idx] = w / w.sum()
    return WeightMatrix(W)


def _fix_signs(V):
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def embed(W: WeightMatrix, p: int = 2) -> EmbeddingResult:
    """Bottom eigenvectors of ``M = (I - W)^T (I - W)``, skipping the constant one.

    Coordinates are scaled by ``sqrt(n)`` and each column's largest-magnitude
    entry is made positive.

    When every row of ``W`` sums to one the constant vector is an exact null
    vector of ``M``; it is then deflated explicitly and the remaining
    eigenproblem is solved on its orthogonal complement.  Otherwise the
    ``p + 1`` smallest eigenpairs of ``M`` are used directly.
    """
    n = W.n
    if not 1 <= p <= n - 1:
        raise InvalidInputError(f"p must satisfy 1 <= p <= n-1 = {n - 1}, got {p}")
    R = np.eye(n) - W.W
    M = R.T @ R
    M = 0.5 * (M + M.T)
    try:
        if np.max(np.abs(R.sum(axis=1))) <= 1e-10:
            # near-degenerate bottom eigenvalues would otherwise mix the constant in
            Q = scipy.linalg.null_space(np.ones((1, n)))
            rest, V = scipy.linalg.eigh(Q.T @ M @ Q, subset_by_index=[0, p - 1])
            vals = np.concatenate([[np.ones(n) @ M @ np.ones(n) / n], rest])
            vecs = Q @ V
        else:
            vals, vecs = scipy.linalg.eigh(M, subset_by_index=[0, p])
            vecs = vecs[:, 1:]
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    Y = _fix_signs(vecs) * np.sqrt(n)
    return EmbeddingResult(Y, vals)


def stochastic_weight_matrix(weights, nbrs: NeighborhoodSystem, renormalize: bool = True):
    """Scatter per-point weight vectors onto the neighbor pattern.

    Returns the matrix and the indices of rows left unnormalized because
    their sum was below ``1e-12`` in magnitude.
    """
    weights = np.asarray(weights, dtype=float)
    n, k = nbrs.neighbor_indices.shape
    if weights.shape != (n, k):
        raise InvalidInputError(f"weights must have shape {(n, k)}, got {weights.shape}")
    W = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k)
    W[rows, nbrs.neighbor_indices.ravel()] = weights.ravel()
    skipped = np.zeros(0, dtype=int)
    if renormalize:
        sums = W.sum(axis=1)
        small = np.abs(sums) < 1e-12
        skipped = np.flatnonzero(small)
        W[~small] /= sums[~small, None]
        if skipped.size:
            warnings.warn(f"{skipped.size} weight rows sum to ~0 and were left as-is")
    return WeightMatrix(W), skipped


def embed_from_stochastic(weights, nbrs: NeighborhoodSystem, p: int = 2,
                          renormalize: bool = True) -> EmbeddingResult:
    W, skipped = stochastic_weight_matrix(weights, nbrs, renormalize)
    res = embed(W, p)
    return EmbeddingResult(res.Y, res.eigenvalues, skipped)


def reconstruction_residuals(data: DataMatrix, W: WeightMatrix) -> np.ndarray:
    """``||x_i - sum_j W_ij x_j||`` for every point."""
    return np.linalg.norm(data.points - W.W @ data.points, axis=1)
