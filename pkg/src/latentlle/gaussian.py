"""Multivariate Gaussians, including rank-deficient ("degenerate") ones.

A degenerate Gaussian lives on the affine support ``mean + range(cov)``; its
density is taken with respect to Lebesgue measure on that support, using the
pseudo-inverse and pseudo-determinant of the covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import PinnedRNG
from .exceptions import InvalidInputError
from .numerics import RANK_TOL, as_matrix, pinv

SYM_TOL = 1e-10
SUPPORT_TOL = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = as_matrix(self.covariance, "covariance")
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InvalidInputError(
                f"mean shape {mean.shape} and covariance shape {cov.shape} disagree"
            )
        scale = max(1.0, float(np.max(np.abs(cov), initial=0.0)))
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYM_TOL * scale:
            raise InvalidInputError("covariance is not symmetric")
        if cov.size and np.linalg.eigvalsh(0.5 * (cov + cov.T))[0] < -SYM_TOL * scale:
            raise InvalidInputError("covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class JointBlocks:
    """Block partition of a joint Gaussian over ``(x1, x2)``."""

    mu1: np.ndarray
    mu2: np.ndarray
    S11: np.ndarray
    S12: np.ndarray
    S21: np.ndarray
    S22: np.ndarray

    def __post_init__(self):
        mu1 = np.atleast_1d(np.asarray(self.mu1, dtype=float))
        mu2 = np.atleast_1d(np.asarray(self.mu2, dtype=float))
        d1, d2 = mu1.size, mu2.size
        blocks = {}
        for name, shape in (("S11", (d1, d1)), ("S12", (d1, d2)),
                            ("S21", (d2, d1)), ("S22", (d2, d2))):
            B = as_matrix(getattr(self, name), name)
            if B.shape != shape:
                raise InvalidInputError(f"{name} has shape {B.shape}, expected {shape}")
            blocks[name] = B
        if np.max(np.abs(blocks["S21"] - blocks["S12"].T), initial=0.0) > 1e-12 * max(
            1.0, float(np.max(np.abs(blocks["S12"]), initial=0.0))
        ):
            raise InvalidInputError("S21 must equal S12 transposed")
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "mu2", mu2)
        for name, B in blocks.items():
            object.__setattr__(self, name, B)

    @classmethod
    def split(cls, g: GaussianParams, d1: int) -> "JointBlocks":
        m, C = g.mean, g.covariance
        return cls(m[:d1], m[d1:], C[:d1, :d1], C[:d1, d1:], C[d1:, :d1], C[d1:, d1:])

    def assemble(self) -> GaussianParams:
        cov = np.block([[self.S11, self.S12], [self.S21, self.S22]])
        return GaussianParams(np.concatenate([self.mu1, self.mu2]), 0.5 * (cov + cov.T))

    def marginal(self, which: int) -> GaussianParams:
        if which == 1:
            return GaussianParams(self.mu1, self.S11)
        if which == 2:
            return GaussianParams(self.mu2, self.S22)
        raise InvalidInputError("which must be 1 or 2")


def log_density(g: GaussianParams, x, rank_tol: float = RANK_TOL):
    """Log-density of ``x`` (shape ``(d,)`` or ``(m, d)``).

    For a singular covariance the density is restricted to its support and
    points off the support get ``-inf``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != g.dim:
        raise InvalidInputError(f"x has dimension {X.shape[-1]}, expected {g.dim}")
    C = g.covariance
    w, V = np.linalg.eigh(C)
    top = max(float(w[-1]), 0.0) if w.size else 0.0
    keep = w > rank_tol * top if top > 0 else np.zeros_like(w, dtype=bool)
    r = int(keep.sum())
    D = X - g.mean
    coords = D @ V
    inner = coords[:, keep]
    outside = np.linalg.norm(coords[:, ~keep], axis=1)
    maha = np.sum(inner**2 / w[keep], axis=1)
    logdet = float(np.sum(np.log(w[keep])))
    out = -0.5 * (r * LOG_2PI + logdet + maha)
    off = outside > SUPPORT_TOL * np.linalg.norm(D, axis=1)
    out = np.where(off, -np.inf, out)
    return float(out[0]) if single else out


def condition(j: JointBlocks, x1, rank_tol: float = RANK_TOL) -> GaussianParams:
    """Distribution of ``x2`` given ``x1``.

    Mean ``mu2 + S21 S11^+ (x1 - mu1)``, covariance ``S22 - S21 S11^+ S12``;
    the pseudo-inverse covers singular ``S11``.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    if x1.shape != j.mu1.shape:
        raise InvalidInputError(f"x1 has shape {x1.shape}, expected {j.mu1.shape}")
    gain = j.S21 @ pinv(j.S11, rank_tol)
    mean = j.mu2 + gain @ (x1 - j.mu1)
    cov = j.S22 - gain @ j.S12
    return GaussianParams(mean, 0.5 * (cov + cov.T))


def sample(g: GaussianParams, rng_seed: int, count: int, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Draw ``count`` samples as rows, via ``V diag(sqrt(lambda)) z + mean``.

    Eigenvalues below ``rank_tol * lambda_max`` are zeroed so degenerate
    directions carry no noise at all.
    """
    if count < 0:
        raise InvalidInputError("count must be non-negative")
    w, V = np.linalg.eigh(g.covariance)
    top = max(float(w[-1]), 0.0) if w.size else 0.0
    w = np.where(w > rank_tol * top, w, 0.0) if top > 0 else np.zeros_like(w)
    z = PinnedRNG(rng_seed).normal((count, g.dim))
    return g.mean + (z * np.sqrt(w)) @ V.T
