import numpy as np
import pytest
from scipy import integrate
from scipy.linalg import subspace_angles

from latentlle.exceptions import InvalidInputError
from latentlle.latent_linear import (
    LatentLinearModel,
    fa_fit,
    fa_log_likelihood,
    load_model,
    model_from_dict,
    model_to_dict,
    ppca_fit_closed_form,
    ppca_fit_em,
    save_model,
)
from latentlle.neighborhood import DataMatrix
from latentlle.stochastic import EMConfig


def fa_data(n, d=5, q=2, seed=0, psi=None):
    g = np.random.default_rng(seed)
    L = g.normal(size=(d, q))
    psi = g.uniform(0.2, 1.0, d) if psi is None else psi
    X = g.normal(size=(n, q)) @ L.T + g.normal(size=(n, d)) * np.sqrt(psi) + 1.5
    return DataMatrix(X), L, psi


def test_model_validation():
    with pytest.raises(InvalidInputError):
        LatentLinearModel(np.zeros((3, 1)), np.array([1.0, -1.0, 1.0]), np.zeros(3))
    with pytest.raises(InvalidInputError):
        LatentLinearModel(np.zeros((3, 1)), np.array([1.0, 1.0]), np.zeros(3))
    with pytest.raises(InvalidInputError):
        LatentLinearModel(np.zeros((3, 1)), np.array(0.0), np.zeros(3), "isotropic")


def test_log_likelihood_examples():
    m = LatentLinearModel(np.zeros((2, 1)), np.ones(2), np.zeros(2))
    assert fa_log_likelihood(m, np.zeros((1, 2))) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)
    x = np.array([[0.3, -1.2]])
    assert fa_log_likelihood(m, np.vstack([x, x])) == pytest.approx(2 * fa_log_likelihood(m, x))


def test_log_likelihood_matches_marginalization_quadrature():
    lam, psi, mu, x = 1.3, 0.4, 0.2, 1.1
    m = LatentLinearModel(np.array([[lam]]), np.array([psi]), np.array([mu]))

    def integrand(w):
        return (np.exp(-0.5 * (x - lam * w - mu) ** 2 / psi) / np.sqrt(2 * np.pi * psi)
                * np.exp(-0.5 * w**2) / np.sqrt(2 * np.pi))

    val = integrate.quad(integrand, -12, 12, epsabs=1e-14)[0]
    assert fa_log_likelihood(m, [[x]]) == pytest.approx(np.log(val), abs=1e-10)


def test_fa_monotone_and_recovers_covariance():
    data, L, psi = fa_data(10_000)
    model, trace = fa_fit(data, 2, EMConfig(max_iter=500, tol=1e-10))
    assert np.all(np.diff(trace.objectives) >= -1e-8)
    true = L @ L.T + np.diag(psi)
    assert np.linalg.norm(model.covariance() - true) / np.linalg.norm(true) <= 0.1


def test_fa_random_init_monotone_and_deterministic():
    data, _, _ = fa_data(500, seed=1)
    cfg = EMConfig(max_iter=50, seed=3)
    a, ta = fa_fit(data, 2, cfg, init="random")
    b, tb = fa_fit(data, 2, cfg, init="random")
    assert np.all(np.diff(ta.objectives) >= -1e-8)
    assert np.array_equal(a.loading, b.loading) and ta.iterations == tb.iterations


def test_fa_isotropic_residuals_give_equal_psi():
    # d=10 keeps the two-factor model well identified; at d=5 the likelihood has
    # a flat ridge trading one Psi entry against another
    data, _, _ = fa_data(20_000, d=10, psi=np.full(10, 0.5), seed=2)
    model, _ = fa_fit(data, 2, EMConfig(max_iter=500, tol=1e-10))
    p = model.noise_diag
    assert (p.max() - p.min()) / p.mean() <= 0.05


def test_fa_rotation_invariance():
    data, L, psi = fa_data(300, seed=3)
    m = LatentLinearModel(L, psi, data.mu)
    R, _ = np.linalg.qr(np.random.default_rng(4).normal(size=(2, 2)))
    mr = LatentLinearModel(L @ R, psi, data.mu)
    assert abs(fa_log_likelihood(m, data) - fa_log_likelihood(mr, data)) <= 1e-10 * abs(fa_log_likelihood(m, data))


def test_fa_errors():
    data, _, _ = fa_data(50)
    with pytest.raises(InvalidInputError):
        fa_fit(data, 5)
    with pytest.raises(InvalidInputError):
        fa_fit(data, 0)
    with pytest.raises(InvalidInputError):
        fa_fit(data, 2, init="svd")


def test_ppca_closed_form_subspace_data():
    g = np.random.default_rng(5)
    X = g.normal(size=(200, 2)) @ g.normal(size=(2, 5)) + 3.0
    data = DataMatrix(X)
    model = ppca_fit_closed_form(data, 2)
    lam, V = np.linalg.eigh(np.cov(X.T, bias=True))
    assert float(model.noise) <= 1e-12 * lam[-1]
    assert np.max(subspace_angles(model.loading, V[:, -2:])) < 1e-8


def test_ppca_closed_form_isotropic_and_two_d():
    data = DataMatrix(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]) * np.sqrt(2))
    m = ppca_fit_closed_form(data, 1)
    assert float(m.noise) == pytest.approx(1.0)
    assert np.allclose(m.loading, 0.0)

    g = np.random.default_rng(6)
    Z = g.normal(size=(4000, 2))
    Z = (Z - Z.mean(0)) @ np.linalg.inv(np.linalg.cholesky(np.cov(Z.T, bias=True))).T
    Q, _ = np.linalg.qr(g.normal(size=(2, 2)))
    data = DataMatrix(Z * [2.0, 1.0] @ Q.T)
    m = ppca_fit_closed_form(data, 1)
    assert float(m.noise) == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.norm(m.loading) == pytest.approx(np.sqrt(3.0), abs=1e-10)


def test_ppca_sigma_is_mean_discarded_eigenvalue():
    data, _, _ = fa_data(400, seed=7)
    m = ppca_fit_closed_form(data, 2)
    lam = np.sort(np.linalg.eigvalsh(np.cov(data.points.T, bias=True)))[::-1]
    assert abs(float(m.noise) - lam[2:].mean()) <= 1e-10


def test_ppca_em_matches_closed_form_and_is_fixed_point():
    data, _, _ = fa_data(2000, seed=8)
    cf = ppca_fit_closed_form(data, 2)
    em, trace = ppca_fit_em(data, 2, EMConfig(max_iter=1000, tol=1e-12), init="random")
    assert np.all(np.diff(trace.objectives) >= -1e-8)
    C = cf.covariance()
    assert np.linalg.norm(em.covariance() - C) / np.linalg.norm(C) <= 1e-4
    one, _ = ppca_fit_em(data, 2, EMConfig(max_iter=1), init=cf)
    assert np.max(np.abs(one.loading - cf.loading)) < 1e-6
    assert abs(float(one.noise) - float(cf.noise)) < 1e-6


def test_isotropic_fa_equals_ppca_em():
    data, _, _ = fa_data(300, seed=9)
    cfg = EMConfig(max_iter=20)
    a, ta = fa_fit(data, 2, cfg, noise="isotropic")
    b, tb = ppca_fit_em(data, 2, cfg)
    assert ta.iterations == tb.iterations and np.array_equal(a.loading, b.loading)


def test_json_round_trip_bit_exact(tmp_path):
    data, _, _ = fa_data(300, seed=10)
    for model in (fa_fit(data, 2, EMConfig(max_iter=5))[0], ppca_fit_closed_form(data, 2)):
        save_model(tmp_path / "m.json", model)
        back = load_model(tmp_path / "m.json")
        assert back.noise_kind == model.noise_kind
        for attr in ("loading", "noise", "mean"):
            assert np.array_equal(getattr(back, attr), getattr(model, attr))
    doc = model_to_dict(ppca_fit_closed_form(data, 2))
    assert doc["type"] == "ppca" and doc["d"] == 5 and doc["q"] == 2
    with pytest.raises(InvalidInputError):
        model_from_dict({"d": 2})


def test_posterior_mean_shape():
    data, _, _ = fa_data(100, seed=11)
    m = ppca_fit_closed_form(data, 2)
    assert m.posterior_mean(data.points).shape == (100, 2)
