"""Self-check suite run by ``latentlle verify``.

Each check builds its own seeded random instances and returns a
:class:`CheckResult`; nothing here depends on pytest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy.linalg import subspace_angles
from scipy.optimize import minimize_scalar

from . import classic, gaussian, latent_linear, stochastic
from ._rng import PinnedRNG
from .data_io import DatasetSpec, generate
from .neighborhood import DataMatrix, NeighborhoodSystem, knn_graph
from .numerics import SpectralDecomposition, fd_gradient, pinv


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _randint(rng: PinnedRNG, low: int, high: int) -> int:
    """Integer uniform on ``[low, high]``."""
    return low + int(rng.uniform(1)[0] * (high - low + 1))


def _random_spd(rng, k):
    A = rng.normal((k, k))
    return A @ A.T / k + np.eye(k)


def _single_point(X) -> NeighborhoodSystem:
    d, k = X.shape
    return NeighborhoodSystem(k, np.arange(k)[None, :], X[None, :, :])


def gradient_instance(rng: PinnedRNG, h: float = 1e-6):
    """Relative error of the analytic M-step gradient against central differences."""
    d, k = _randint(rng, 2, 5), _randint(rng, 1, 4)
    X = rng.normal((d, k))
    omega = _random_spd(rng, k)
    B, C = rng.normal((d, d)), rng.normal((k, k))
    sc = stochastic.Scatters(B @ B.T / d, C @ C.T / k)
    nbrs = _single_point(X)

    def f(P):
        O = np.linalg.inv(0.5 * (P + P.T))
        prior = stochastic.PriorCovariance("full", omegas=0.5 * (O + O.T)[None])
        return float(stochastic._point_terms(nbrs, prior, sc, 0.0, stochastic.RANK_TOL)[0])

    num = fd_gradient(f, np.linalg.inv(omega), h)
    ana = stochastic.m_step_gradient(nbrs, stochastic.PriorCovariance("full", omegas=omega[None]), sc)[0]
    return float(np.max(np.abs(ana - num)) / np.max(np.abs(num)))


def check_gradient(instances: int = 50, seed: int = 1, tol: float = 1e-5) -> CheckResult:
    rng = PinnedRNG(seed)
    err = max(gradient_instance(rng) for _ in range(instances))
    return CheckResult("gradient_fidelity", err <= tol, f"max_rel_err={err:.3e} instances={instances}")


def _random_scatters(rng, n, d, k):
    data = DataMatrix(rng.normal((n, d)) * rng.uniform(d, 0.5, 2.0))
    nbrs = knn_graph(data, k)
    post = stochastic.e_step(data, nbrs, stochastic.PriorCovariance.identity(n, k))
    return data, nbrs, stochastic.scatters(data, nbrs, post)


def golden_argmax(f: Callable[[float], float], upper: float, lower_ratio: float = 1e-6,
                  grid: int = 64) -> float:
    """Maximize ``f`` on ``(0, upper]`` by golden-section search in ``log sigma``.

    A coarse log grid supplies the three-point bracket.
    """
    t = np.linspace(np.log(upper * lower_ratio), np.log(upper), grid)
    vals = np.array([f(np.exp(s)) for s in t])
    j = int(np.clip(np.argmax(vals), 1, grid - 2))
    res = minimize_scalar(lambda s: -f(np.exp(s)), bracket=(t[j - 1], t[j], t[j + 1]),
                          method="golden", tol=1e-12)
    return float(np.exp(res.x))


def sigma_instance(rng: PinnedRNG):
    """Worst relative gap between the closed form and the 1-D search, and
    whether 0.9 sigma and 1.1 sigma are both strictly worse."""
    d, k = _randint(rng, 2, 5), _randint(rng, 1, 4)
    n = k + _randint(rng, 2, 6)
    data, nbrs, sc = _random_scatters(rng, n, d, k)
    sig = stochastic.m_step_spherical(data, nbrs, sc)
    worst, strict = 0.0, True
    for i in range(n):
        def f(s, i=i):
            sigmas = sig.copy()
            sigmas[i] = s
            return float(stochastic.relaxed_objective(sigmas, data, nbrs, sc)[i])
        found = golden_argmax(f, 10.0 * sig[i])
        worst = max(worst, abs(found - sig[i]) / sig[i])
        best = f(sig[i])
        strict &= f(0.9 * sig[i]) < best and f(1.1 * sig[i]) < best
    return worst, strict


def check_sigma(instances: int = 50, seed: int = 2, tol: float = 1e-6) -> CheckResult:
    rng = PinnedRNG(seed)
    worst, strict = 0.0, True
    for _ in range(instances):
        w, s = sigma_instance(rng)
        worst, strict = max(worst, w), strict and s
    return CheckResult("sigma_closed_form", worst <= tol and strict,
                       f"max_rel_gap={worst:.3e} strict_at_0.9_1.1={strict}")


def check_min_norm(seed: int = 3, tol: float = 1e-10) -> CheckResult:
    rng = PinnedRNG(seed)
    worst = 0.0
    for d, k in [(2, 1), (2, 3), (3, 3), (4, 6), (5, 2)]:
        data = DataMatrix(rng.normal((k + 4, d)))
        nbrs = knn_graph(data, k)
        post = stochastic.e_step(data, nbrs, stochastic.PriorCovariance.identity(data.n, k))
        ref = np.einsum("nkd,nd->nk", pinv(nbrs.local_design), data.centered)
        worst = max(worst, float(np.max(np.abs(post.means - ref))))
    return CheckResult("estep_min_norm", worst <= tol, f"max_abs_err={worst:.3e}")


def em_dataset(rng: PinnedRNG):
    d, k = _randint(rng, 2, 5), _randint(rng, 2, 8)
    n = _randint(rng, 30, 80)
    return DataMatrix(rng.normal((n, d))), k


def check_monotone(datasets: int = 20, seed: int = 4, slack: float = 1e-8) -> CheckResult:
    rng = PinnedRNG(seed)
    worst = 0.0
    for _ in range(datasets):
        data, k = em_dataset(rng)
        _, _, trace = stochastic.fit_stochastic_reconstruction(data, knn_graph(data, k))
        steps = np.diff(trace.objectives)
        if steps.size:
            worst = min(worst, float(steps.min()))
    return CheckResult("em_monotone", worst >= -slack, f"worst_step={worst:.3e}")


def check_termination(seed: int = 0) -> CheckResult:
    data, _ = generate(DatasetSpec("affine_patch", n=200, seed=seed, d=5, m=2))
    cfg = stochastic.EMConfig(max_iter=100, tol=1e-6)
    _, _, trace = stochastic.fit_stochastic_reconstruction(data, knn_graph(data, 6), cfg)
    obj = trace.objectives
    converged = len(obj) >= 2 and abs(obj[-1] - obj[-2]) <= cfg.tol * abs(obj[-2])
    return CheckResult("em_terminates", bool(converged), f"iterations={len(obj)}")


def subspace_data(rng: PinnedRNG, n: int, d: int, m: int) -> DataMatrix:
    basis = rng.normal((d, m))
    return DataMatrix(rng.normal((n, m)) @ basis.T + rng.normal(d))


def check_exact_recovery(seed: int = 5, tol: float = 1e-8) -> CheckResult:
    rng = PinnedRNG(seed)
    worst = 0.0
    for n, d, k in [(4, 5, 3), (3, 4, 2), (60, 5, 3), (40, 6, 2)]:
        data = subspace_data(rng, n, d, k)
        nbrs = knn_graph(data, k)
        _, post, _ = stochastic.fit_stochastic_reconstruction(data, nbrs)
        res = data.centered - np.einsum("ndk,nk->nd", nbrs.local_design, post.means)
        worst = max(worst, float(np.max(np.linalg.norm(res, axis=1))))
    return CheckResult("exact_recovery", worst <= tol, f"max_residual={worst:.3e}")


def check_conditional(tol: float = 1e-12) -> CheckResult:
    g = gaussian.GaussianParams(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
    j = gaussian.JointBlocks.split(g, 1)
    worst = 0.0
    for a in (-2.0, 0.0, 0.7, 3.0):
        c = gaussian.condition(j, np.array([a]))
        worst = max(worst, abs(c.mean[0] - 0.5 * a), abs(c.covariance[0, 0] - 0.75))
    return CheckResult("gaussian_conditional", worst <= tol, f"max_abs_err={worst:.3e}")


def check_ppca_closed_form(seed: int = 6) -> CheckResult:
    rng = PinnedRNG(seed)
    data = DataMatrix(rng.normal((300, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.2]))
    q = 2
    model = latent_linear.ppca_fit_closed_form(data, q)
    spec = SpectralDecomposition.of(np.cov(data.points.T, bias=True))
    sig_err = abs(float(model.noise) - spec.eigenvalues[q:].mean())
    angle = float(np.max(subspace_angles(model.loading, spec.eigenvectors[:, :q])))
    ok = bool(sig_err <= 1e-10 and angle < 1e-8)
    return CheckResult("ppca_closed_form", ok, f"sigma2_err={sig_err:.3e} max_angle={angle:.3e}")


def check_lle_weights(seed: int = 7, tol: float = 1e-10) -> CheckResult:
    rng = PinnedRNG(seed)
    data = DataMatrix(rng.normal((50, 3)))
    nbrs = knn_graph(data, 6)
    W = classic.reconstruction_weights(data, nbrs)
    err = float(np.max(np.abs(W.W.sum(axis=1) - 1.0)))
    return CheckResult("lle_weights_sum_to_one", err <= tol, f"max_abs_err={err:.3e}")


DEFAULT_SUITE = (
    check_gradient,
    check_sigma,
    check_min_norm,
    check_monotone,
    check_termination,
    check_exact_recovery,
    check_conditional,
    check_ppca_closed_form,
    check_lle_weights,
)


def run_suite(checks=DEFAULT_SUITE) -> List[CheckResult]:
    return [check() for check in checks]
