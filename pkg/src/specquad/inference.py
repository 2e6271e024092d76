"""Marginal predictive distribution over the evaluated spectral mixtures.

The numerator integrand p(y | x, D, theta) L(theta) is warped with the
evidence quadrature weights. Taking its offset as ``eps * p(y | x, D, theta)``
gives ``z*_i(y) = z_i sqrt(p_i(y))``, and the WSABI mean becomes

    eps * pbar(y) + 1/2 sum_ij Q_ij z_i z_j sqrt(p_i(y) p_j(y))

where ``pbar`` is the average of the per-kernel predictives. Each
``sqrt(p_i p_j)`` is a scaled Gaussian in y (scale = Bhattacharyya
coefficient), so every test point gets an explicit Gaussian mixture, which
is normalised to unit mass. Weights may be negative since ``Q_ij`` are
signed.
"""

from dataclasses import dataclass

import numpy as np

from specquad import gp
from specquad.spectral import NoiseModel

TRUNCATION = 1e-12
DENSITY_FLOOR = 1e-300
LOG_2PI = np.log(2.0 * np.pi)


class DegenerateMixtureError(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictiveMixture:
    weights: np.ndarray  # (T, C), each row sums to 1
    means: np.ndarray  # (T, C)
    variances: np.ndarray  # (T, C)
    normalizer: np.ndarray  # (T,), mass before normalisation (shifted scale)

    @property
    def n_points(self):
        return self.weights.shape[0]

    def density(self, y):
        """Signed mixture density; ``y`` is (T,) or (T, G)."""
        y = np.asarray(y, dtype=float)
        col = y.ndim == 1
        Y = y[:, None, None] if col else y[:, :, None]
        w, mu, v = (a[:, None, :] for a in (self.weights, self.means, self.variances))
        pdf = np.exp(-0.5 * (Y - mu) ** 2 / v) / np.sqrt(2.0 * np.pi * v)
        out = np.sum(w * pdf, axis=-1)
        return out[:, 0] if col else out

    def log_density(self, y):
        d = self.density(y)
        return np.log(np.maximum(d, DENSITY_FLOOR)), int(np.sum(d < DENSITY_FLOOR))


@dataclass(frozen=True)
class Metrics:
    rmse: float
    test_log_likelihood: float
    n_floored: int = 0

    def denormalized(self, target_scale, count):
        return Metrics(self.rmse * target_scale, self.test_log_likelihood - count * np.log(target_scale),
                       self.n_floored)

    def to_dict(self):
        return {"rmse": self.rmse, "test_log_likelihood": self.test_log_likelihood, "n_floored": self.n_floored}


def per_theta_predictions(thetas, train, test_inputs, noise=None, index=None):
    """Observation-mode predictive means and variances, shape (h, T)."""
    index = range(len(thetas)) if index is None else index
    T = np.atleast_2d(test_inputs).shape[0]
    means = np.full((len(thetas), T), np.nan)
    variances = np.full((len(thetas), T), np.nan)
    for i in index:
        post = gp.predictive_posterior(thetas[i], train, test_inputs, noise)
        means[i], variances[i] = post.mean, post.variance
    return means, variances


def predictive_posterior_marginalized(state, artifacts, train, test_inputs, noise=None,
                                      truncation=TRUNCATION, predictions=None):
    """Normalised Gaussian mixture per test point.

    ``predictions`` may supply precomputed (means, variances) of shape (h, T);
    otherwise only the kernels carrying non-negligible weight are refit.
    """
    noise = noise or NoiseModel()
    h = state.h
    z, Q, eps = state.z, artifacts.Q, state.eps
    base = 0.5 * Q * np.outer(z, z)
    iu, ju = np.triu_indices(h)
    pair_w = np.where(iu == ju, 1.0, 2.0) * base[iu, ju]
    off_w = np.full(h, eps / h)
    scale = max(np.max(np.abs(pair_w)), np.max(off_w))
    if not scale > 0:
        raise DegenerateMixtureError("all quadrature weights vanish; increase the evaluation budget")
    keep_pair = np.abs(pair_w) >= truncation * scale
    keep_off = off_w >= truncation * scale
    iu, ju, pair_w = iu[keep_pair], ju[keep_pair], pair_w[keep_pair]
    off_idx = np.flatnonzero(keep_off)

    needed = np.unique(np.concatenate([iu, ju, off_idx]))
    if predictions is None:
        mu, var = per_theta_predictions(state.thetas, train, test_inputs, noise, index=needed)
    else:
        mu, var = predictions
    mu, var = mu.T, var.T  # (T, h)

    mi, mj, vi, vj = mu[:, iu], mu[:, ju], var[:, iu], var[:, ju]
    vsum = vi + vj
    bc = np.sqrt(2.0 * np.sqrt(vi * vj) / vsum) * np.exp(-((mi - mj) ** 2) / (4.0 * vsum))
    pair_mean = (mi * vj + mj * vi) / vsum
    pair_var = 2.0 * vi * vj / vsum
    pair_weight = pair_w[None, :] * bc

    weights = np.concatenate([np.broadcast_to(off_w[off_idx], (mu.shape[0], off_idx.size)), pair_weight], axis=1)
    means = np.concatenate([mu[:, off_idx], pair_mean], axis=1)
    variances = np.concatenate([var[:, off_idx], pair_var], axis=1)
    total = weights.sum(axis=1)
    if not np.all(total > 0):
        raise DegenerateMixtureError("predictive mixture has no positive mass; increase the evaluation budget")
    return PredictiveMixture(weights / total[:, None], means, variances, total)


def moment_matched(pm):
    mean = np.sum(pm.weights * pm.means, axis=1)
    second = np.sum(pm.weights * (pm.variances + pm.means**2), axis=1)
    var = np.maximum(second - mean**2, 0.0)
    return gp.GaussianPosterior(mean, var)


def metrics(pm, test_targets):
    y = np.asarray(test_targets, dtype=float)
    if y.size != pm.n_points:
        raise ValueError(f"{y.size} targets for {pm.n_points} test points")
    mean = np.sum(pm.weights * pm.means, axis=1)
    rmse = float(np.sqrt(np.mean((mean - y) ** 2)))
    logd, floored = pm.log_density(y)
    return Metrics(rmse, float(np.sum(logd)), floored)


def gaussian_metrics(mean, variance, test_targets):
    """Metrics of independent Gaussian predictions (single-kernel baselines)."""
    y = np.asarray(test_targets, dtype=float)
    rmse = float(np.sqrt(np.mean((mean - y) ** 2)))
    ll = float(np.sum(-0.5 * LOG_2PI - 0.5 * np.log(variance) - 0.5 * (y - mean) ** 2 / variance))
    return Metrics(rmse, ll)
