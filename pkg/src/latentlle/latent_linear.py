"""Global linear latent-variable models: factor analysis and probabilistic PCA.

Both model ``x = Lambda w + mu + eps`` with ``w ~ N(0, I)``; factor analysis
uses a diagonal noise covariance ``Psi``, probabilistic PCA an isotropic
``sigma^2 I``.  Update formulas are the textbook EM (Ghahramani & Hinton)
and the Tipping & Bishop closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._rng import PinnedRNG
from .exceptions import DivergedError, InvalidInputError
from .gaussian import GaussianParams, log_density
from .neighborhood import DataMatrix
from .numerics import SpectralDecomposition
from .stochastic import EMConfig, EMTrace

NOISE_KINDS = ("diagonal", "isotropic")


@dataclass(frozen=True)
class LatentLinearModel:
    loading: np.ndarray      # (d, q)
    noise: np.ndarray        # (d,) diagonal of Psi, or 0-d sigma^2
    mean: np.ndarray         # (d,)
    noise_kind: str = "diagonal"

    def __post_init__(self):
        L = np.asarray(self.loading, dtype=float)
        mu = np.asarray(self.mean, dtype=float)
        noise = np.asarray(self.noise, dtype=float)
        if L.ndim != 2 or mu.shape != (L.shape[0],):
            raise InvalidInputError("loading must be (d, q) and mean (d,)")
        if self.noise_kind not in NOISE_KINDS:
            raise InvalidInputError(f"noise_kind must be one of {NOISE_KINDS}")
        expected = () if self.noise_kind == "isotropic" else (L.shape[0],)
        if noise.shape != expected:
            raise InvalidInputError(f"noise must have shape {expected}, got {noise.shape}")
        if np.any(noise <= 0) or not np.all(np.isfinite(noise)):
            raise InvalidInputError("noise variances must be finite and > 0")
        object.__setattr__(self, "loading", L)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "noise", noise)

    @property
    def d(self) -> int:
        return self.loading.shape[0]

    @property
    def q(self) -> int:
        return self.loading.shape[1]

    @property
    def noise_diag(self) -> np.ndarray:
        return np.broadcast_to(self.noise, (self.d,)).copy()

    def covariance(self) -> np.ndarray:
        """Marginal covariance ``Lambda Lambda^T + Psi``."""
        return self.loading @ self.loading.T + np.diag(self.noise_diag)

    def posterior_mean(self, X) -> np.ndarray:
        """``E[w | x]`` for each row of ``X``."""
        beta = self._beta()
        return (np.asarray(X, dtype=float) - self.mean) @ beta.T

    def _beta(self):
        L = self.loading
        return np.linalg.solve(self.covariance(), L).T      # Lambda^T C^{-1}


def fa_log_likelihood(model: LatentLinearModel, data) -> float:
    """Sum of marginal log-densities ``log N(x_i; mu, Lambda Lambda^T + Psi)``."""
    X = data.points if isinstance(data, DataMatrix) else np.atleast_2d(np.asarray(data, float))
    C = model.covariance()
    return float(np.sum(log_density(GaussianParams(model.mean, 0.5 * (C + C.T)), X)))


def _sample_cov(data: DataMatrix) -> np.ndarray:
    Xc = data.centered
    S = Xc.T @ Xc / data.n
    return 0.5 * (S + S.T)


def _check_q(data: DataMatrix, q: int):
    if not 1 <= q < data.d:
        raise InvalidInputError(f"q must satisfy 1 <= q < d = {data.d}, got {q}")


def _initial_model(data, q, noise, init, seed, S):
    if isinstance(init, LatentLinearModel):
        if init.loading.shape != (data.d, q):
            raise InvalidInputError("initial model has the wrong shape")
        return LatentLinearModel(init.loading, _coerce_noise(init.noise_diag, noise), data.mu, noise)
    floor = 1e-6 * max(float(np.mean(np.diag(S))), np.finfo(float).tiny)
    if init == "pca":
        spec = SpectralDecomposition.of(S)
        lam = np.maximum(spec.eigenvalues[:q], 0.0)
        L = spec.eigenvectors[:, :q] * np.sqrt(lam)
        psi = np.maximum(np.diag(S) - np.sum(L**2, axis=1), floor)
    elif init == "random":
        scale = np.sqrt(np.mean(np.diag(S)) / q)
        L = PinnedRNG(seed).normal((data.d, q)) * scale
        psi = np.maximum(np.diag(S), floor)
    else:
        raise InvalidInputError("init must be 'pca', 'random' or a LatentLinearModel")
    return LatentLinearModel(L, _coerce_noise(psi, noise), data.mu, noise)


def _coerce_noise(psi, noise):
    return np.asarray(np.mean(psi)) if noise == "isotropic" else np.asarray(psi, float)


def fa_fit(data: DataMatrix, q: int, cfg: EMConfig = EMConfig(), noise: str = "diagonal",
           init="pca"):
    """Maximum-likelihood factor analysis by EM.

    ``mu`` is fixed at the sample mean.  E-step: ``beta = Lambda^T C^{-1}``,
    ``E[w] = beta (x - mu)``, ``E[w w^T] = I - beta Lambda + E[w] E[w]^T``.
    M-step: ``Lambda = (sum (x - mu) E[w]^T)(sum E[w w^T])^{-1}`` and
    ``Psi = diag(S - Lambda (1/n) sum E[w] (x - mu)^T)``; with
    ``noise="isotropic"`` the diagonal is averaged into ``sigma^2``.

    ``init`` is ``"pca"`` (top principal directions scaled by
    ``sqrt(eigenvalue)``), ``"random"`` (seeded by ``cfg.seed``) or a model.
    Variances are floored at ``1e-12`` times the mean data variance.

    Returns
    -------
    model : LatentLinearModel
    trace : EMTrace
        Marginal log-likelihood after every iteration.
    """
    _check_q(data, q)
    if data.n < 2:
        raise InvalidInputError("need at least two points")
    if noise not in NOISE_KINDS:
        raise InvalidInputError(f"noise must be one of {NOISE_KINDS}")
    S = _sample_cov(data)
    Xc = data.centered
    n = data.n
    floor = 1e-12 * max(float(np.mean(np.diag(S))), np.finfo(float).tiny)
    model = _initial_model(data, q, noise, init, cfg.seed, S)
    trace = EMTrace()
    prev = None
    for it in range(1, int(cfg.max_iter) + 1):
        L = model.loading
        beta = model._beta()                         # (q, d)
        Ew = Xc @ beta.T                             # (n, q)
        sum_Eww = n * (np.eye(q) - beta @ L) + Ew.T @ Ew
        cross = Xc.T @ Ew                            # sum (x - mu) E[w]^T
        L_new = np.linalg.solve(sum_Eww.T, cross.T).T
        psi = np.diag(S) - np.einsum("ij,ij->i", L_new, cross) / n
        psi = np.maximum(psi, floor)
        new = LatentLinearModel(L_new, _coerce_noise(psi, noise), data.mu, noise)
        ll = fa_log_likelihood(new, data)
        change = max(float(np.max(np.abs(L_new - L))),
                     float(np.max(np.abs(new.noise_diag - model.noise_diag))))
        trace.append(it, ll, change)
        if not np.isfinite(ll):
            raise DivergedError(f"log-likelihood became non-finite at iteration {it}", trace)
        model = new
        if prev is not None and abs(ll - prev) <= cfg.tol * abs(prev):
            break
        prev = ll
    return model, trace


def ppca_fit_em(data: DataMatrix, q: int, cfg: EMConfig = EMConfig(), init="pca"):
    """Probabilistic PCA by EM: :func:`fa_fit` with isotropic noise."""
    return fa_fit(data, q, cfg, noise="isotropic", init=init)


def ppca_fit_closed_form(data: DataMatrix, q: int) -> LatentLinearModel:
    """Closed-form maximum-likelihood PPCA.

    ``sigma^2`` is the mean of the ``d - q`` discarded eigenvalues of the
    sample covariance and ``Lambda = V_q (diag(lambda_q) - sigma^2 I)^{1/2}``;
    leading eigenvalues at or below ``sigma^2`` give zero loading columns.
    """
    _check_q(data, q)
    spec = SpectralDecomposition.of(_sample_cov(data))
    lam = spec.eigenvalues
    sigma2 = float(np.mean(lam[q:]))
    L = spec.eigenvectors[:, :q] * np.sqrt(np.maximum(lam[:q] - sigma2, 0.0))
    tiny = np.finfo(float).tiny
    return LatentLinearModel(L, np.asarray(max(sigma2, tiny)), data.mu, "isotropic")


def _hex(values):
    return [float(v).hex() for v in np.ravel(values)]


def _unhex(values):
    return np.array([float.fromhex(v) if isinstance(v, str) else float(v) for v in values])


def model_to_dict(model: LatentLinearModel, kind: str = None) -> dict:
    """Flat document; floats are C99 hex strings so the round trip is bit-exact."""
    kind = kind or ("ppca" if model.noise_kind == "isotropic" else "factor_analysis")
    return {
        "type": kind,
        "d": model.d,
        "q": model.q,
        "mean": _hex(model.mean),
        "loading": _hex(model.loading),
        "noise": {"kind": model.noise_kind, "values": _hex(model.noise)},
    }


def model_from_dict(doc: dict) -> LatentLinearModel:
    try:
        d, q = int(doc["d"]), int(doc["q"])
        kind = doc["noise"]["kind"]
        noise = _unhex(doc["noise"]["values"])
        return LatentLinearModel(
            _unhex(doc["loading"]).reshape(d, q),
            noise[0] if kind == "isotropic" else noise,
            _unhex(doc["mean"]),
            kind,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed model document: {exc}") from exc


def save_model(path, model: LatentLinearModel, kind: str = None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_dict(model, kind), fh, indent=1)
        fh.write("\n")


def load_model(path) -> LatentLinearModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
