"""scikit-learn compatible estimators over the functional core.

The LLE variants are embedding-only (``fit`` / ``fit_transform``), like
``sklearn.manifold.SpectralEmbedding``; the linear latent models also
``transform`` new data to posterior latent means and ``score`` it.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import classic, latent_linear, stochastic
from .exceptions import InvalidInputError
from .neighborhood import DataMatrix, knn_graph


def _check_X(X, min_samples=2):
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples)


class StochasticLLE(TransformerMixin, BaseEstimator):
    """LLE whose reconstruction weights come from the EM posterior over weights.

    Parameters
    ----------
    n_neighbors : int
    n_components : int
        Embedding dimension ``p``.
    mode : {"spherical", "full"}
        Prior family; ``"spherical"`` has a closed-form M-step.
    extract : {"mean", "sample"}
        Use posterior means, or one seeded posterior draw per point.
    renormalize : bool
        Rescale each weight row to sum to one before embedding.

    Remaining parameters mirror :class:`~latentlle.stochastic.EMConfig`.

    Attributes
    ----------
    embedding_ : ndarray of shape (n_samples, n_components)
    weights_ : ndarray of shape (n_samples, n_neighbors)
    neighbors_ : NeighborhoodSystem
    prior_ : PriorCovariance
    posterior_ : WeightPosterior
    trace_ : EMTrace
    """

    def __init__(self, n_neighbors=8, n_components=2, mode="spherical", max_iter=100,
                 tol=1e-6, lr=1e-3, grad_steps=5, sigma_floor=1e-12, ridge=0.0,
                 scatter_scope="global", extract="mean", random_state=0,
                 centering="data_mean", renormalize=True):
        self.n_neighbors = n_neighbors
        self.n_components = n_components
        self.mode = mode
        self.max_iter = max_iter
        self.tol = tol
        self.lr = lr
        self.grad_steps = grad_steps
        self.sigma_floor = sigma_floor
        self.ridge = ridge
        self.scatter_scope = scatter_scope
        self.extract = extract
        self.random_state = random_state
        self.centering = centering
        self.renormalize = renormalize

    def em_config(self) -> stochastic.EMConfig:
        return stochastic.EMConfig(
            mode=self.mode, max_iter=self.max_iter, tol=self.tol, lr=self.lr,
            grad_steps=self.grad_steps, sigma_floor=self.sigma_floor, ridge=self.ridge,
            scatter_scope=self.scatter_scope, extract=self.extract, seed=self.random_state,
        )

    def fit(self, X, y=None, callback=None):
        X = _check_X(X)
        cfg = self.em_config()
        data = DataMatrix(X)
        self.neighbors_ = knn_graph(data, self.n_neighbors, self.centering)
        self.prior_, self.posterior_, self.trace_ = stochastic.fit_stochastic_reconstruction(
            data, self.neighbors_, cfg, callback
        )
        self.weights_ = stochastic.extract_weights(self.posterior_, cfg.extract, cfg.seed)
        W, skipped = classic.stochastic_weight_matrix(self.weights_, self.neighbors_, self.renormalize)
        self.weight_matrix_ = W
        res = classic.embed(W, self.n_components)
        self.embedding_ = res.Y
        self.eigenvalues_ = res.eigenvalues
        self.unnormalized_rows_ = skipped
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).embedding_

    def reconstruction_residuals(self, X):
        """Model residuals ``||x_i - mu - X_i w_i||`` of the extracted weights."""
        check_is_fitted(self, "weights_")
        data = DataMatrix(_check_X(X))
        pred = np.einsum("ndk,nk->nd", self.neighbors_.local_design, self.weights_)
        return np.linalg.norm(data.centered - pred, axis=1)


class LocallyLinearEmbedding(TransformerMixin, BaseEstimator):
    """Standard LLE with regularized sum-to-one reconstruction weights."""

    def __init__(self, n_neighbors=8, n_components=2, reg=1e-3):
        self.n_neighbors = n_neighbors
        self.n_components = n_components
        self.reg = reg

    def fit(self, X, y=None):
        data = DataMatrix(_check_X(X))
        self.neighbors_ = knn_graph(data, self.n_neighbors)
        self.weight_matrix_ = classic.reconstruction_weights(data, self.neighbors_, self.reg)
        self.weights_ = np.take_along_axis(self.weight_matrix_.W, self.neighbors_.neighbor_indices, 1)
        res = classic.embed(self.weight_matrix_, self.n_components)
        self.embedding_ = res.Y
        self.eigenvalues_ = res.eigenvalues
        self.n_features_in_ = data.d
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


class _LatentLinearBase(TransformerMixin, BaseEstimator):
    def transform(self, X):
        """Posterior mean of the latent factors."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.model_.d:
            raise InvalidInputError(f"expected {self.model_.d} features, got {X.shape[1]}")
        return self.model_.posterior_mean(X)

    def score(self, X, y=None):
        """Average marginal log-likelihood per sample."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return latent_linear.fa_log_likelihood(self.model_, X) / X.shape[0]

    def get_covariance(self):
        check_is_fitted(self, "model_")
        return self.model_.covariance()

    @property
    def components_(self):
        check_is_fitted(self, "model_")
        return self.model_.loading.T

    @property
    def noise_variance_(self):
        check_is_fitted(self, "model_")
        return self.model_.noise


class FactorAnalysis(_LatentLinearBase):
    """Maximum-likelihood factor analysis fitted by EM."""

    def __init__(self, n_components=2, max_iter=1000, tol=1e-8, init="pca",
                 noise="diagonal", random_state=0):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.init = init
        self.noise = noise
        self.random_state = random_state

    def fit(self, X, y=None):
        data = DataMatrix(_check_X(X))
        cfg = stochastic.EMConfig(max_iter=self.max_iter, tol=self.tol, seed=self.random_state)
        self.model_, self.trace_ = latent_linear.fa_fit(data, self.n_components, cfg,
                                                        self.noise, self.init)
        self.n_features_in_ = data.d
        return self


class ProbabilisticPCA(_LatentLinearBase):
    """Probabilistic PCA, closed form (default) or EM."""

    def __init__(self, n_components=2, solver="closed_form", max_iter=1000, tol=1e-8,
                 init="pca", random_state=0):
        self.n_components = n_components
        self.solver = solver
        self.max_iter = max_iter
        self.tol = tol
        self.init = init
        self.random_state = random_state

    def fit(self, X, y=None):
        data = DataMatrix(_check_X(X))
        if self.solver == "closed_form":
            self.model_ = latent_linear.ppca_fit_closed_form(data, self.n_components)
            self.trace_ = stochastic.EMTrace()
        elif self.solver == "em":
            cfg = stochastic.EMConfig(max_iter=self.max_iter, tol=self.tol, seed=self.random_state)
            self.model_, self.trace_ = latent_linear.ppca_fit_em(data, self.n_components, cfg,
                                                                 self.init)
        else:
            raise InvalidInputError("solver must be 'closed_form' or 'em'")
        self.n_features_in_ = data.d
        return self
