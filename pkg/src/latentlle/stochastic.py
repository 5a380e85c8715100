"""Stochastic linear reconstruction for LLE, fitted by EM.

Each point is modelled as ``x_i = X_i w_i + mu`` with a Gaussian prior
``w_i ~ N(0, Omega_i)`` on its reconstruction weights, ``X_i`` being the
``d x k`` matrix of (centered) neighbors.  The E-step conditions the joint
Gaussian of ``(x_i, w_i)`` on ``x_i``; the M-step updates the prior
covariances either by gradient ascent on ``Omega_i^{-1}`` (``mode="full"``)
or in closed form for a spherical prior ``Omega_i = sigma_i I``.

Shapes: ``n`` points, ambient dimension ``d``, ``k`` neighbors.  Per-point
quantities are stacked on the leading axis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .exceptions import DivergedError, InvalidInputError, NotPSDError, WrongModeError
from .gaussian import GaussianParams, JointBlocks, sample
from .neighborhood import DataMatrix, NeighborhoodSystem
from .numerics import PSD_TOL, RANK_TOL, kron, pinv, pseudo_logdet, unvec, vec

logger = logging.getLogger(__name__)

MODES = ("full", "spherical")
SCOPES = ("global", "per_point")
EXTRACTS = ("mean", "sample")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class EMConfig:
    mode: str = "spherical"
    max_iter: int = 100
    tol: float = 1e-6
    lr: float = 1e-3
    grad_steps: int = 5
    sigma_floor: float = 1e-12
    ridge: float = 0.0
    scatter_scope: str = "global"
    extract: str = "mean"
    seed: int = 0
    psd_floor: float = 1e-9
    rank_tol: float = RANK_TOL

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scatter_scope not in SCOPES:
            raise InvalidInputError(f"scatter_scope must be one of {SCOPES}")
        if self.extract not in EXTRACTS:
            raise InvalidInputError(f"extract must be one of {EXTRACTS}")
        if int(self.max_iter) < 1:
            raise InvalidInputError("max_iter must be >= 1")
        if not self.tol > 0:
            raise InvalidInputError("tol must be > 0")
        if not self.lr > 0 or int(self.grad_steps) < 1:
            raise InvalidInputError("lr must be > 0 and grad_steps >= 1")
        if self.ridge < 0 or self.sigma_floor <= 0:
            raise InvalidInputError("ridge must be >= 0 and sigma_floor > 0")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class PriorCovariance:
    """Per-point prior covariance: full ``(n, k, k)`` or spherical ``(n,)``."""

    mode: str
    omegas: Optional[np.ndarray] = None
    sigmas: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode == "full":
            O = np.asarray(self.omegas, dtype=float)
            if O.ndim != 3 or O.shape[1] != O.shape[2]:
                raise InvalidInputError(f"omegas must have shape (n, k, k), got {O.shape}")
            if not np.all(np.isfinite(O)):
                raise InvalidInputError("omegas contain NaN or Inf")
            scale = np.maximum(1.0, np.abs(O).max(axis=(1, 2)))
            if np.any(np.abs(O - O.transpose(0, 2, 1)).max(axis=(1, 2)) > PSD_TOL * scale):
                raise NotPSDError("prior covariance is not symmetric")
            if np.any(np.linalg.eigvalsh(O)[:, 0] < -PSD_TOL * scale):
                raise NotPSDError("prior covariance is not positive semi-definite")
            object.__setattr__(self, "omegas", O)
        elif self.mode == "spherical":
            s = np.asarray(self.sigmas, dtype=float)
            if s.ndim != 1 or not np.all(np.isfinite(s)) or np.any(s <= 0):
                raise NotPSDError("spherical prior needs finite sigmas > 0")
            object.__setattr__(self, "sigmas", s)
        else:
            raise InvalidInputError(f"mode must be one of {MODES}")

    @classmethod
    def identity(cls, n: int, k: int, mode: str = "spherical") -> "PriorCovariance":
        if mode == "full":
            return cls("full", omegas=np.broadcast_to(np.eye(k), (n, k, k)).copy())
        return cls(mode, sigmas=np.ones(n))

    def matrices(self, k: int) -> np.ndarray:
        if self.mode == "full":
            return self.omegas
        return self.sigmas[:, None, None] * np.eye(k)

    @property
    def n(self) -> int:
        return len(self.omegas if self.mode == "full" else self.sigmas)


@dataclass(frozen=True)
class WeightPosterior:
    means: np.ndarray        # (n, k)
    covariances: np.ndarray  # (n, k, k)

    def second_moments(self) -> np.ndarray:
        return self.covariances + self.means[:, :, None] * self.means[:, None, :]


@dataclass(frozen=True)
class Scatters:
    """``S1`` and ``S2``; with ``scope="per_point"`` both carry a leading ``n`` axis."""

    S1: np.ndarray
    S2: np.ndarray
    scope: str = "global"

    def for_points(self, n: int):
        if self.scope == "global":
            return (np.broadcast_to(self.S1, (n,) + self.S1.shape),
                    np.broadcast_to(self.S2, (n,) + self.S2.shape))
        return self.S1, self.S2


@dataclass
class EMTrace:
    """Per-iteration ``(iteration, objective, max_change)`` rows."""

    iterations: list = field(default_factory=list)

    def append(self, iteration: int, objective: float, max_change: float):
        if self.iterations and iteration <= self.iterations[-1][0]:
            raise InvalidInputError("trace iterations must be strictly increasing")
        self.iterations.append((int(iteration), float(objective), float(max_change)))

    @property
    def objectives(self) -> np.ndarray:
        return np.array([row[1] for row in self.iterations])

    def __len__(self):
        return len(self.iterations)


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _check_shapes(data: DataMatrix, nbrs: NeighborhoodSystem):
    if nbrs.local_design.shape != (data.n, data.d, nbrs.k):
        raise InvalidInputError(
            f"local designs have shape {nbrs.local_design.shape}, "
            f"expected {(data.n, data.d, nbrs.k)}"
        )


def _cov_inverse(C, ridge, rank_tol):
    if ridge > 0:
        return np.linalg.inv(C + ridge * np.eye(C.shape[-1]))
    return pinv(C, rank_tol)


def _cov_logdet(C, ridge, rank_tol):
    if ridge > 0:
        return np.linalg.slogdet(C + ridge * np.eye(C.shape[-1]))[1]
    return pseudo_logdet(C, rank_tol)


def build_joint(X_i, omega, mu) -> JointBlocks:
    """Joint Gaussian of ``(x_i, w_i)``: mean ``(mu, 0)``, covariance
    ``[[X O X^T, X O], [O^T X^T, O]]``."""
    X_i = np.asarray(X_i, dtype=float)
    O = np.asarray(omega, dtype=float)
    XO = X_i @ O
    return JointBlocks(mu, np.zeros(O.shape[0]), _sym(XO @ X_i.T), XO, XO.T, O)


def _pinv_null(A, rank_tol):
    """Pseudo-inverse of each ``A`` and the projector onto its null space.

    The projector is assembled from right singular vectors, so it is exactly
    zero when ``A`` has full column rank.
    """
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    m = s.shape[-1]
    keep = s > rank_tol * s[..., :1]
    inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    Ap = np.einsum("nji,nj,nkj->nik", Vt[:, :m, :], inv_s, U[:, :, :m])
    null = np.ones(Vt.shape[:2], dtype=bool)
    null[:, :m] = ~keep
    N = np.einsum("nj,nja,njb->nab", null.astype(float), Vt, Vt)
    return Ap, N


def _prior_sqrt(O):
    w, V = np.linalg.eigh(O)
    return V * np.sqrt(np.maximum(w, 0.0))[:, None, :]


def e_step(data: DataMatrix, nbrs: NeighborhoodSystem, prior: PriorCovariance,
           ridge: float = 0.0, rank_tol: float = RANK_TOL) -> WeightPosterior:
    """Posterior of every ``w_i`` given ``x_i`` under the current prior.

    Mean ``Omega^T X^T C^+ (x_i - mu)``, covariance
    ``Omega - Omega^T X^T C^+ X Omega`` with ``C = X Omega X^T``.  Without a
    ridge these are evaluated as ``L A^+`` and ``L (I - A^+ A) L^T`` for
    ``Omega = L L^T``, ``A = X L``, which avoids squaring the condition number;
    a spherical prior reduces to ``X^+`` and ``sigma (I - X^+ X)``.
    """
    _check_shapes(data, nbrs)
    n, k = data.n, nbrs.k
    X = nbrs.local_design
    if prior.n != n:
        raise InvalidInputError("prior and data disagree on n")
    if ridge > 0:
        O = prior.matrices(k)
        B = O @ X.transpose(0, 2, 1)
        gain = B @ _cov_inverse(_sym(X @ B), ridge, rank_tol)
        cov = O - gain @ X @ O
    elif prior.mode == "spherical":
        gain, N = _pinv_null(X, rank_tol)
        cov = prior.sigmas[:, None, None] * N
    else:
        L = _prior_sqrt(prior.omegas)
        Ap, N = _pinv_null(X @ L, rank_tol)
        gain = L @ Ap
        cov = L @ N @ L.transpose(0, 2, 1)
    means = np.einsum("nkd,nd->nk", gain, data.centered)
    cov = _sym(cov)
    w, V = np.linalg.eigh(cov)
    neg = w[:, 0] < 0
    if np.any(neg):
        cov[neg] = _sym((V[neg] * np.maximum(w[neg], 0.0)[:, None, :]) @ V[neg].transpose(0, 2, 1))
    return WeightPosterior(means, cov)


def scatters(data: DataMatrix, nbrs: NeighborhoodSystem, post: WeightPosterior,
             scope: str = "global") -> Scatters:
    """Expected residual scatter ``S1`` and weight second moment ``S2``.

    Per point the residual expectation is ``rbar rbar^T + X_i Sigma_i X_i^T``
    with ``rbar = x_i - mu - X_i E[w_i]``, the same quantity as the expanded
    three-term form but PSD by construction.
    """
    if scope not in SCOPES:
        raise InvalidInputError(f"scope must be one of {SCOPES}")
    _check_shapes(data, nbrs)
    X = nbrs.local_design
    rbar = data.centered - np.einsum("ndk,nk->nd", X, post.means)
    S1 = rbar[:, :, None] * rbar[:, None, :] + X @ post.covariances @ X.transpose(0, 2, 1)
    S1 = _sym(S1)
    S2 = _sym(post.second_moments())
    if scope == "global":
        return Scatters(S1.mean(axis=0), S2.mean(axis=0), "global")
    return Scatters(S1, S2, "per_point")


def _prior_logdet_and_inverse(prior: PriorCovariance, k: int):
    if prior.mode == "spherical":
        s = prior.sigmas
        return k * np.log(s), (1.0 / s)[:, None, None] * np.eye(k)
    try:
        L = np.linalg.cholesky(prior.omegas)
    except np.linalg.LinAlgError:
        raise InvalidInputError("full-mode prior must be positive definite") from None
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    return logdet, np.linalg.inv(prior.omegas)


def joint_log_likelihood(data: DataMatrix, nbrs: NeighborhoodSystem, prior: PriorCovariance,
                         post: WeightPosterior, scope: str = "global", ridge: float = 0.0,
                         rank_tol: float = RANK_TOL) -> float:
    """Expected complete-data log-likelihood used as the M-step surrogate.

    ``sum_i -(n/2)[pldet(C_i) + tr(C_i^+ S1) + log|Omega_i| + tr(Omega_i^{-1} S2)]``
    with ``C_i = X_i Omega_i X_i^T``, plus ``-(n/2)(d + k) log(2 pi)``.
    """
    sc = scatters(data, nbrs, post, scope)
    return _surrogate(nbrs, prior, sc, data.d, ridge, rank_tol)


def _point_terms(nbrs, prior, sc, ridge, rank_tol):
    """Per-point surrogate contributions, without the ``2 pi`` constant."""
    n, k = nbrs.n, nbrs.k
    X = nbrs.local_design
    S1, S2 = sc.for_points(n)
    ld_prior, O_inv = _prior_logdet_and_inverse(prior, k)
    if ridge > 0:
        C = _sym(X @ prior.matrices(k) @ X.transpose(0, 2, 1))
        ld_c = _cov_logdet(C, ridge, rank_tol)
        tr_c = np.einsum("nij,nji->n", _cov_inverse(C, ridge, rank_tol), S1)
    else:
        # C^+ = A^+T A^+ and pldet(C) = 2 sum log sv(A) for A = X L
        if prior.mode == "spherical":
            A = np.sqrt(prior.sigmas)[:, None, None] * X
        else:
            A = X @ _prior_sqrt(prior.omegas)
        sv = np.linalg.svd(A, compute_uv=False)
        keep = sv > rank_tol * sv[:, :1]
        ld_c = 2.0 * np.where(keep, np.log(np.where(keep, sv, 1.0)), 0.0).sum(axis=1)
        Ap = pinv(A, rank_tol)
        tr_c = np.einsum("nkd,nde,nke->n", Ap, S1, Ap)
    trace2 = np.einsum("nij,nji->n", O_inv, S2)
    return -0.5 * n * (ld_c + tr_c + ld_prior + trace2)


def _surrogate(nbrs, prior, sc, d, ridge, rank_tol):
    n, k = nbrs.n, nbrs.k
    return float(_point_terms(nbrs, prior, sc, ridge, rank_tol).sum() - 0.5 * n * (d + k) * LOG_2PI)


def posterior_entropy(post: WeightPosterior, prior: PriorCovariance,
                      rank_tol: float = RANK_TOL) -> np.ndarray:
    """Differential entropy of each (possibly degenerate) posterior on its support.

    Rank is judged against the prior scale, so a numerically-zero posterior
    covariance counts as a point mass with entropy 0.
    """
    k = post.means.shape[1]
    ref = np.linalg.eigvalsh(prior.matrices(k))[:, -1]
    w = np.linalg.eigvalsh(post.covariances)
    keep = w > rank_tol * ref[:, None]
    logs = np.where(keep, np.log(np.where(keep, w, 1.0)), 0.0).sum(axis=1)
    return 0.5 * keep.sum(axis=1) * (LOG_2PI + 1.0) + 0.5 * logs


def elbo(data: DataMatrix, nbrs: NeighborhoodSystem, prior: PriorCovariance,
         post: WeightPosterior, scope: str = "global", ridge: float = 0.0,
         rank_tol: float = RANK_TOL) -> float:
    """Surrogate plus ``n`` times the summed posterior entropies.

    The factor ``n`` matches the ``n/2`` weighting of the surrogate, which
    makes the E-step the maximizer over posteriors supported on
    ``{w : X_i w = P_i (x_i - mu)}``; this is the value EM increases.
    """
    jll = joint_log_likelihood(data, nbrs, prior, post, scope, ridge, rank_tol)
    return jll + data.n * float(posterior_entropy(post, prior, rank_tol).sum())


def m_step_gradient(nbrs: NeighborhoodSystem, prior: PriorCovariance, sc: Scatters,
                    ridge: float = 0.0, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Gradient of the surrogate with respect to each ``Omega_i^{-1}``.

    ``(n/2)[B C^+ B^T - B C^+ S1 C^+ B^T + Omega - S2]`` with
    ``B = Omega X^T`` and ``C = X Omega X^T``.  In Kronecker form the first
    two terms are ``unvec(T vec(C^+))`` and ``unvec(T vec(C^+ S1 C^+))`` for
    ``T = B (x) B``.
    """
    if prior.mode != "full":
        raise WrongModeError("m_step_gradient requires a full-mode prior")
    n, k = nbrs.n, nbrs.k
    X = nbrs.local_design
    O = prior.omegas
    S1, S2 = sc.for_points(n)
    B = O @ X.transpose(0, 2, 1)
    Ci = _cov_inverse(_sym(X @ B), ridge, rank_tol)
    Bt = B.transpose(0, 2, 1)
    G = B @ Ci @ Bt - B @ Ci @ S1 @ Ci @ Bt + O - S2
    return _sym(0.5 * n * G)


def m_step_gradient_orthogonal(nbrs: NeighborhoodSystem, prior: PriorCovariance,
                               sc: Scatters) -> np.ndarray:
    """Kronecker-form gradient ``(n/2)[unvec(T vec(C)) - unvec(T vec(S1)) + Omega - S2]``
    with ``T = X^T (x) X^T``.

    It coincides with :func:`m_step_gradient` only when each ``X_i`` is square
    orthogonal (then ``C^{-1} = X Omega^{-1} X^T``); kept for comparison.
    """
    if prior.mode != "full":
        raise WrongModeError("gradient requires a full-mode prior")
    n, k = nbrs.n, nbrs.k
    S1, S2 = sc.for_points(n)
    out = np.empty((n, k, k))
    for i in range(n):
        X = nbrs.local_design[i]
        O = prior.omegas[i]
        T = kron(X.T, X.T)
        out[i] = 0.5 * n * (unvec(T @ vec(X @ O @ X.T), k, k)
                            - unvec(T @ vec(S1[i]), k, k) + O - S2[i])
    return out


def m_step_spherical(data: DataMatrix, nbrs: NeighborhoodSystem, sc: Scatters,
                     sigma_floor: float = 1e-12, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Closed-form spherical update ``(tr((X X^T)^+ S1) + tr(S2)) / (d + k)``."""
    a, b = _spherical_traces(nbrs, sc, rank_tol)
    return np.maximum((a + b) / (data.d + nbrs.k), sigma_floor)


def _spherical_traces(nbrs, sc, rank_tol):
    S1, S2 = sc.for_points(nbrs.n)
    Xp = pinv(nbrs.local_design, rank_tol)          # (X X^T)^+ = X^+T X^+
    a = np.einsum("nkd,nde,nke->n", Xp, S1, Xp)
    return a, np.trace(S2, axis1=1, axis2=2)


def relaxed_objective(sigmas, data: DataMatrix, nbrs: NeighborhoodSystem, sc: Scatters,
                      rank_tol: float = RANK_TOL) -> np.ndarray:
    """Per-point surrogate under ``Omega_i = sigma_i I``, up to sigma-free terms.

    ``-(n/2)[(d + k) log sigma_i + (tr((X_i X_i^T)^+ S1) + tr(S2)) / sigma_i]``;
    :func:`m_step_spherical` is its maximizer.
    """
    a, b = _spherical_traces(nbrs, sc, rank_tol)
    s = np.asarray(sigmas, dtype=float)
    return -0.5 * data.n * ((data.d + nbrs.k) * np.log(s) + (a + b) / s)


def m_step_full(nbrs: NeighborhoodSystem, prior: PriorCovariance, sc: Scatters,
                lr: float = 1e-3, grad_steps: int = 5, psd_floor: float = 1e-9,
                ridge: float = 0.0, rank_tol: float = RANK_TOL,
                max_halvings: int = 40) -> PriorCovariance:
    """``grad_steps`` ascent steps on ``P_i = Omega_i^{-1}``.

    After each step ``P_i`` is symmetrized and its eigenvalues floored at
    ``psd_floor``.  A point whose surrogate term would drop retries with the
    step halved, up to ``max_halvings`` times, then keeps its old value.
    """
    if prior.mode != "full":
        raise WrongModeError("m_step_full requires a full-mode prior")
    P = _sym(np.linalg.inv(prior.omegas))
    current = prior
    f_old = _point_terms(nbrs, current, sc, ridge, rank_tol)
    for _ in range(grad_steps):
        G = m_step_gradient(nbrs, current, sc, ridge, rank_tol)
        eta = np.full(nbrs.n, float(lr))
        pending = np.ones(nbrs.n, dtype=bool)
        P_next, f_next = P.copy(), f_old.copy()
        for _ in range(max_halvings + 1):
            cand = P + eta[:, None, None] * G
            w, V = np.linalg.eigh(_sym(cand))
            cand = _sym((V * np.maximum(w, psd_floor)[:, None, :]) @ V.transpose(0, 2, 1))
            trial = PriorCovariance("full", omegas=_sym(np.linalg.inv(cand)))
            f_try = _point_terms(nbrs, trial, sc, ridge, rank_tol)
            ok = pending & np.isfinite(f_try) & (f_try >= f_old)
            P_next[ok], f_next[ok] = cand[ok], f_try[ok]
            pending &= ~ok
            if not pending.any():
                break
            eta[pending] *= 0.5
        P, f_old = P_next, f_next
        current = PriorCovariance("full", omegas=_sym(np.linalg.inv(P)))
    return current


def _max_change(old: PriorCovariance, new: PriorCovariance) -> float:
    if old.mode == "spherical":
        return float(np.max(np.abs(new.sigmas - old.sigmas)))
    return float(np.max(np.abs(new.omegas - old.omegas)))


def fit_stochastic_reconstruction(
    data: DataMatrix,
    nbrs: NeighborhoodSystem,
    cfg: EMConfig = EMConfig(),
    callback: Optional[Callable[[int, float, float], None]] = None,
):
    """Run EM from ``Omega_i = I`` until the objective settles.

    The recorded objective is :func:`elbo` evaluated after each M-step with
    that iteration's posterior.  Iteration stops when its relative change
    drops below ``cfg.tol`` or after ``cfg.max_iter`` iterations.

    Returns
    -------
    prior : PriorCovariance
    posterior : WeightPosterior
        E-step under the final prior.
    trace : EMTrace
    """
    _check_shapes(data, nbrs)
    prior = PriorCovariance.identity(data.n, nbrs.k, cfg.mode)
    trace = EMTrace()
    prev = None
    for it in range(1, int(cfg.max_iter) + 1):
        post = e_step(data, nbrs, prior, cfg.ridge, cfg.rank_tol)
        sc = scatters(data, nbrs, post, cfg.scatter_scope)
        if cfg.mode == "spherical":
            new = PriorCovariance(
                "spherical", sigmas=m_step_spherical(data, nbrs, sc, cfg.sigma_floor, cfg.rank_tol)
            )
        else:
            new = m_step_full(nbrs, prior, sc, cfg.lr, int(cfg.grad_steps), cfg.psd_floor,
                              cfg.ridge, cfg.rank_tol)
        obj = (_surrogate(nbrs, new, sc, data.d, cfg.ridge, cfg.rank_tol)
               + data.n * float(posterior_entropy(post, new, cfg.rank_tol).sum()))
        change = _max_change(prior, new)
        trace.append(it, obj, change)
        if callback is not None:
            callback(it, obj, change)
        logger.debug("iter=%d objective=%.17g dmax=%.3g", it, obj, change)
        if not np.isfinite(obj):
            raise DivergedError(f"objective became non-finite at iteration {it}", trace)
        prior = new
        if prev is not None and abs(obj - prev) <= cfg.tol * max(abs(prev), np.finfo(float).tiny):
            break
        prev = obj
    post = e_step(data, nbrs, prior, cfg.ridge, cfg.rank_tol)
    return prior, post, trace


def _point_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(i)]).generate_state(1, np.uint64)[0])


def extract_weights(post: WeightPosterior, mode: str = "mean", seed: int = 0) -> np.ndarray:
    """Posterior means, or one posterior draw per point (seeded per point)."""
    if mode == "mean":
        return post.means.copy()
    if mode != "sample":
        raise InvalidInputError(f"mode must be one of {EXTRACTS}")
    out = np.empty_like(post.means)
    for i, (m, S) in enumerate(zip(post.means, post.covariances)):
        out[i] = sample(GaussianParams(m, S), _point_seed(seed, i), 1)[0]
    return out
