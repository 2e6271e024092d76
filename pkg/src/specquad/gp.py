"""Exact GP regression under one spectral-mixture kernel."""

from dataclasses import dataclass

import numpy as np

from specquad.linalg import cho_solve, jittered_cholesky, logdet_from_cholesky, solve_lower
from specquad.spectral import NoiseModel, gram_matrix

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianPosterior:
    """Predictive mean and covariance (full matrix) or variance (vector)."""

    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self):
        c = self.covariance
        return np.diag(c).copy() if c.ndim == 2 else c


@dataclass(frozen=True)
class GPFit:
    theta: object
    inputs: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    log_likelihood: float
    noise: NoiseModel
    jitter: float


def fit(theta, train, noise=None):
    """Factorise the noisy Gram matrix of ``train`` under ``theta``."""
    noise = noise or NoiseModel()
    if train.count < 1:
        raise ValueError("need at least one training point")
    K = gram_matrix(theta, train.inputs, noise=noise, add_noise=True)
    L, jitter = jittered_cholesky(K)
    a = cho_solve(L, train.targets)
    lml = -0.5 * train.targets @ a - 0.5 * logdet_from_cholesky(L) - 0.5 * train.count * LOG_2PI
    return GPFit(theta, train.inputs, L, a, float(lml), noise, jitter)


def log_marginal_likelihood(theta, train, noise=None):
    return fit(theta, train, noise).log_likelihood


def predict(gp, test_inputs, full_cov=False, observation=True):
    """Posterior at ``test_inputs`` from a :class:`GPFit`.

    ``observation`` adds the noise variance (predicting y rather than f).
    """
    Xs = np.asarray(test_inputs, dtype=float)
    if Xs.size == 0:
        empty = np.zeros((0, 0)) if full_cov else np.zeros(0)
        return GaussianPosterior(np.zeros(0), empty)
    Xs = np.atleast_2d(Xs)
    Ks = gram_matrix(gp.theta, gp.inputs, Xs)
    mean = Ks.T @ gp.alpha
    V = solve_lower(gp.chol, Ks)
    extra = gp.noise.noise_variance if observation else 0.0
    if full_cov:
        cov = gram_matrix(gp.theta, Xs) - V.T @ V
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices_from(cov)] = np.maximum(np.diag(cov), 0.0) + extra
        return GaussianPosterior(mean, cov)
    # k(0) = 1 for every normalised spectral mixture
    var = np.maximum(1.0 - np.sum(V * V, axis=0), 0.0) + extra
    return GaussianPosterior(mean, var)


def predictive_posterior(theta, train, test_inputs, noise=None, full_cov=False, observation=True):
    return predict(fit(theta, train, noise), test_inputs, full_cov=full_cov, observation=observation)
