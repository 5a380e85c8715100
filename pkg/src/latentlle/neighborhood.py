"""Exact k-nearest-neighbor graphs and per-point local design matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError
from .numerics import as_matrix

CENTERINGS = ("data_mean", "none")


@dataclass(frozen=True)
class DataMatrix:
    """``n x d`` points with their arithmetic mean."""

    points: np.ndarray
    mu: np.ndarray = field(init=False)

    def __post_init__(self):
        X = as_matrix(self.points, "points")
        if X.shape[0] < 1:
            raise InvalidInputError("data must contain at least one point")
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "mu", X.mean(axis=0))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def centered(self) -> np.ndarray:
        return self.points - self.mu


@dataclass(frozen=True)
class NeighborhoodSystem:
    """Neighbor indices ``(n, k)`` and local designs ``X_i`` stacked as ``(n, d, k)``."""

    k: int
    neighbor_indices: np.ndarray
    local_design: np.ndarray
    centering: str = "data_mean"

    @property
    def n(self) -> int:
        return self.neighbor_indices.shape[0]


def pairwise_sq_dists(A, B=None, chunk: int = 512) -> np.ndarray:
    """Squared Euclidean distances from explicit differences (no Gram trick)."""
    A = np.asarray(A, dtype=float)
    B = A if B is None else np.asarray(B, dtype=float)
    out = np.empty((A.shape[0], B.shape[0]))
    for s in range(0, A.shape[0], chunk):
        diff = A[s:s + chunk, None, :] - B[None, :, :]
        out[s:s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest_indices(points, k: int) -> np.ndarray:
    """Row-wise ``k`` nearest other points; ties go to the smaller index."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n - 1:
        raise InvalidInputError(f"k must satisfy 1 <= k <= n-1 = {n - 1}, got {k}")
    D = pairwise_sq_dists(points)
    np.fill_diagonal(D, np.inf)
    # stable sort keeps ascending index order among equal distances
    return np.argsort(D, axis=1, kind="stable")[:, :k]


def local_design(data: DataMatrix, indices, centering: str = "data_mean") -> np.ndarray:
    """``d x k`` matrix whose columns are the listed neighbors (minus ``mu`` if centered)."""
    if centering not in CENTERINGS:
        raise InvalidInputError(f"centering must be one of {CENTERINGS}")
    idx = np.asarray(indices, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= data.n):
        raise InvalidInputError(f"neighbor index out of range [0, {data.n})")
    cols = data.points[idx]
    if centering == "data_mean":
        cols = cols - data.mu
    return cols.T.copy()


def knn_graph(data: DataMatrix, k: int, centering: str = "data_mean") -> NeighborhoodSystem:
    """Exact Euclidean kNN structure with local designs attached."""
    if centering not in CENTERINGS:
        raise InvalidInputError(f"centering must be one of {CENTERINGS}")
    idx = nearest_indices(data.points, k)
    cols = data.points[idx]                      # (n, k, d)
    if centering == "data_mean":
        cols = cols - data.mu
    return NeighborhoodSystem(k, idx, np.ascontiguousarray(cols.transpose(0, 2, 1)), centering)


def neighborhood_preservation(X, Y, k: int) -> float:
    """Mean fraction of each point's ``k`` input-space neighbors kept in ``Y``."""
    a = nearest_indices(X, k)
    b = nearest_indices(Y, k)
    shared = [np.intersect1d(r, s).size for r, s in zip(a, b)]
    return float(np.mean(shared) / k)
