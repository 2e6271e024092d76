"""Single spectral-mixture kernel fitted by maximum marginal likelihood."""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from specquad import gp
from specquad.acquisition import bounds_for, decode, encode
from specquad.linalg import CholeskyError, cho_solve, jittered_cholesky, logdet_from_cholesky
from specquad.spectral import NoiseModel, SpectralMixtureParams, sample_prior

log = logging.getLogger(__name__)

LOG_NOISE_BOUNDS = (np.log(1e-6), np.log(1.0))


@dataclass
class SMFit:
    theta: SpectralMixtureParams
    noise: NoiseModel
    log_likelihood: float
    history: list = field(default_factory=list)  # objective after each accepted iteration
    converged: bool = True


def sm_log_likelihood(u, n, X, y, with_grad=True):
    """Log marginal likelihood and gradient in unconstrained coordinates.

    ``u`` = (weight logits[1:], means, log scales, log noise variance).
    """
    D = X.shape[1]
    w, means, scales = decode(u[:-1], n, D)
    w, means, scales = w[0], means[0], scales[0]
    noise = np.exp(u[-1])
    R = X[:, None, :] - X[None, :, :]
    N = X.shape[0]
    env, cos, sin, base = [], [], [], np.zeros((N, N))
    for j in range(n):
        e = np.exp(-2.0 * np.pi**2 * np.sum((scales[j] * R) ** 2, axis=-1))
        ph = 2.0 * np.pi * np.sum(means[j] * R, axis=-1)
        c = np.cos(ph)
        env.append(e)
        cos.append(c)
        sin.append(np.sin(ph))
        base += w[j] * e * c
    K = base.copy()
    K[np.diag_indices(N)] += noise
    L, _ = jittered_cholesky(K)
    a = cho_solve(L, y)
    lml = -0.5 * y @ a - 0.5 * logdet_from_cholesky(L) - 0.5 * N * np.log(2.0 * np.pi)
    if not with_grad:
        return lml
    W = np.outer(a, a) - cho_solve(L, np.eye(N))
    # d lml / d w_j, then through the softmax
    gw = np.array([0.5 * np.sum(W * env[j] * cos[j]) for j in range(n)])
    g_logits = w * (gw - w @ gw)
    g_means = np.empty((n, D))
    g_logs = np.empty((n, D))
    for j in range(n):
        for d in range(D):
            dK_m = -w[j] * env[j] * sin[j] * (2.0 * np.pi * R[:, :, d])
            dK_s = w[j] * env[j] * cos[j] * (-4.0 * np.pi**2 * scales[j, d] ** 2 * R[:, :, d] ** 2)
            g_means[j, d] = 0.5 * np.sum(W * dK_m)
            g_logs[j, d] = 0.5 * np.sum(W * dK_s)
    g_noise = 0.5 * np.trace(W) * noise
    grad = np.concatenate([g_logits[1:], g_means.ravel(), g_logs.ravel(), [g_noise]])
    return lml, grad


def fit_sm(train, n_components, prior, rng, restarts=5, init_noise=0.01, maxiter=200, start=None):
    """Gradient-based MLE of one SM kernel (weights, means, scales, noise).

    Restarts are prior draws with ``n_components`` components; ``start``
    (a (theta, noise variance) pair) adds a user-supplied initialisation.
    """
    X, y = train.inputs, train.targets
    n, D = n_components, train.dim
    bounds = bounds_for(prior, n) + [LOG_NOISE_BOUNDS]
    lo, hi = np.array(bounds).T

    draws = sample_prior(prior, rng, restarts, n=n) if restarts else []
    inits = [np.concatenate([encode(t), [np.log(init_noise)]]) for t in draws]
    if start is not None:
        inits.insert(0, np.concatenate([encode(start[0]), [np.log(start[1])]]))

    if not inits:
        raise ValueError("need at least one restart or a start point")
    best = None
    for u0 in inits:
        u0 = np.clip(u0, lo, hi)
        history = []

        def fun(u):
            try:
                v, g = sm_log_likelihood(u, n, X, y)
            except CholeskyError:
                return 1e10, np.zeros_like(u)
            return -v, -g

        def record(intermediate_result):
            history.append(-float(intermediate_result.fun))

        converged = True
        try:
            res = optimize.minimize(fun, u0, jac=True, method="L-BFGS-B", bounds=bounds,
                                    options={"maxiter": maxiter}, callback=record)
            u, value = res.x, -float(res.fun)
            converged = bool(res.success)
        except (ValueError, FloatingPointError) as exc:
            log.warning("SM optimisation failed (%s); keeping the initial point", exc)
            u, value, converged = u0, -fun(u0)[0], False
        if best is None or value > best[1]:
            best = (u, value, history, converged)

    u, value, history, converged = best
    if not converged:
        log.warning("SM optimisation did not converge; reporting the best point found")
    w, means, scales = decode(u[:-1], n, D)
    theta = SpectralMixtureParams(w[0], means[0], scales[0])
    return SMFit(theta, NoiseModel(float(np.exp(u[-1]))), value, history, converged)


def predict_sm(fit, train, test_inputs):
    return gp.predictive_posterior(fit.theta, train, test_inputs, fit.noise)
