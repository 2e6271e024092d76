"""Square-root warped Bayesian quadrature (WSABI-L) over spectral mixtures.

The likelihood surrogate models ``z = sqrt(2 (L - eps))`` with a zero-mean GP
under the MMD hyper-kernel and linearises the warp about the posterior mean,

    E[L(theta)]          = eps + mu(theta)^2 / 2
    Cov[L(t1), L(t2)]    = mu(t1) Sigma(t1, t2) mu(t2)
    E[int L dpi]         = eps + z' Q z / 2,   Q = K^-1 (int k_t k_t' dpi) K^-1

Kernel integrals against the prior have no closed form for the MMD kernel
and are estimated from quasi Monte Carlo prior draws.

All likelihoods are handled on a shifted scale ``L = exp(logL - shift)``
with ``shift = max logL`` so the best observation has L = 1.
"""

from dataclasses import dataclass

import numpy as np

from specquad.hyperkernel import SURROGATE_NOISE, MixtureBank, kernel_from_distance, mmd_matrix
from specquad.linalg import cho_solve, jittered_cholesky, solve_lower
from specquad.spectral import sample_prior_qmc

EPS_FACTOR = 0.8
DEFAULT_MC_SAMPLES = 1000


@dataclass(frozen=True, eq=False)
class SurrogateState:
    thetas: tuple
    bank: MixtureBank
    log_likelihoods: np.ndarray
    L: np.ndarray
    z: np.ndarray
    eps: float
    hyper: object
    dist: np.ndarray
    chol: np.ndarray
    jitter: float
    shared_log_shift: float
    noise: float

    @property
    def h(self):
        return self.z.size

    @property
    def weights_z(self):
        """K^-1 z."""
        return cho_solve(self.chol, self.z)


@dataclass(frozen=True, eq=False)
class McIntegralCache:
    samples: tuple
    bank: MixtureBank
    kernel_cross: np.ndarray  # (m, h)
    single_integral: np.ndarray  # (h, h)
    double_integral: np.ndarray  # (h, h) or None when skipped

    @property
    def m(self):
        return self.kernel_cross.shape[0]


@dataclass(frozen=True, eq=False)
class QuadratureArtifacts:
    Q: np.ndarray
    chol: np.ndarray


@dataclass(frozen=True)
class EvidenceEstimate:
    mean: float  # shifted scale
    variance: float  # shifted scale squared; nan if the double integral was skipped
    shared_log_shift: float
    raw_variance: float = float("nan")

    @property
    def log_mean(self):
        with np.errstate(divide="ignore"):  # an underflowed mean is reported as -inf
            return float(np.log(self.mean) + self.shared_log_shift)

    @property
    def log_sd(self):
        """Delta-method standard deviation of the log evidence."""
        if not self.mean > 0:
            return float("nan")
        return float(np.sqrt(self.variance) / self.mean)

    def to_dict(self):
        return {
            "log_evidence_mean": self.log_mean,
            "evidence_mean_shifted": self.mean,
            "evidence_variance": self.variance,
            "shared_log_shift": self.shared_log_shift,
        }


def warp(log_likelihoods, eps_factor=EPS_FACTOR):
    """Shift, shifted likelihoods, offset and square-root observations."""
    logL = np.asarray(log_likelihoods, dtype=float)
    if logL.size < 1:
        raise ValueError("need at least one log-likelihood")
    if not np.all(np.isfinite(logL)):
        raise ValueError("non-finite log-likelihood")
    shift = float(np.max(logL))
    L = np.exp(logL - shift)
    eps = float(eps_factor * np.min(L))
    return shift, L, eps, np.sqrt(2.0 * np.maximum(L - eps, 0.0))


def make_surrogate(thetas, log_likelihoods, hyper, eps_factor=EPS_FACTOR, noise=SURROGATE_NOISE,
                   bank=None, dist=None):
    """Warp the likelihood observations and factorise the surrogate Gram matrix.

    ``bank`` and ``dist`` (the MMD matrix between ``thetas``) may be passed
    in when already available.
    """
    thetas = tuple(thetas)
    logL = np.asarray(log_likelihoods, dtype=float)
    if len(thetas) != logL.size:
        raise ValueError("need one log-likelihood per observed mixture")
    shift, L, eps, z = warp(logL, eps_factor)
    if bank is None:
        bank = MixtureBank.from_params(thetas, hyper.symmetrize)
    if dist is None:
        dist = mmd_matrix(bank, bank)
    K = kernel_from_distance(dist, hyper)
    K[np.diag_indices_from(K)] += noise
    chol, jitter = jittered_cholesky(K)
    return SurrogateState(thetas, bank, logL, L, z, eps, hyper, dist, chol, jitter, shift, noise)


def surrogate_posterior(state, bank, full_cov=True):
    """Posterior mean and covariance of the (unwarped) surrogate at ``bank``."""
    if not isinstance(bank, MixtureBank):
        bank = MixtureBank.from_params(bank, state.hyper.symmetrize)
    kx = kernel_from_distance(mmd_matrix(bank, state.bank), state.hyper)
    mu = kx @ state.weights_z
    V = solve_lower(state.chol, kx.T)
    if full_cov:
        prior = kernel_from_distance(mmd_matrix(bank, bank), state.hyper)
        return mu, prior - V.T @ V
    return mu, state.hyper.lam**2 - np.sum(V * V, axis=0)


def warped_posterior_moments(state, thetas):
    """Linearised mean and covariance of the likelihood surrogate at ``thetas``."""
    mu, S = surrogate_posterior(state, thetas)
    return state.eps + 0.5 * mu**2, mu[:, None] * S * mu[None, :]


def build_mc_cache(state, prior, m=DEFAULT_MC_SAMPLES, rng=None, double=True, block=256, samples=None):
    """Monte Carlo estimates of the kernel integrals against the prior.

    single = 1/m sum_s k_s k_s',  double = 1/m^2 sum_{s,t} kappa(s, t) k_s k_t'
    with k_s the kernel vector between sample s and the observations. The
    m x m sample Gram is formed in row blocks and never stored.
    """
    if samples is None:
        if m < 2:
            raise ValueError("need at least 2 Monte Carlo samples")
        samples = sample_prior_qmc(prior, m, rng if rng is not None else np.random.default_rng())
    samples = tuple(samples)
    m = len(samples)
    sbank = MixtureBank.from_params(samples, state.hyper.symmetrize)
    kc = kernel_from_distance(mmd_matrix(sbank, state.bank), state.hyper)
    single = kc.T @ kc / m
    single = 0.5 * (single + single.T)
    dbl = None
    if double:
        acc = np.zeros((m, kc.shape[1]))
        for start in range(0, m, block):
            rows = np.arange(start, min(start + block, m))
            kss = kernel_from_distance(mmd_matrix(sbank.take(rows), sbank), state.hyper)
            acc[rows] = kss @ kc
        dbl = kc.T @ acc / m**2
        dbl = 0.5 * (dbl + dbl.T)
    return McIntegralCache(samples, sbank, kc, single, dbl)


def quadrature_weights(state, cache):
    """Q = K^-1 single K^-1 via triangular solves."""
    X = cho_solve(state.chol, cache.single_integral)
    Q = cho_solve(state.chol, X.T)
    return QuadratureArtifacts(0.5 * (Q + Q.T), state.chol)


def evidence_moments(state, cache, artifacts):
    """Posterior mean and variance of the evidence on the shifted scale."""
    z = state.z
    mean = state.eps + 0.5 * z @ artifacts.Q @ z
    if cache.double_integral is None:
        return EvidenceEstimate(float(mean), float("nan"), state.shared_log_shift)
    a = state.weights_z
    SI = cache.single_integral
    inner = cache.double_integral - SI @ cho_solve(state.chol, SI)
    raw = float(a @ inner @ a)
    return EvidenceEstimate(float(mean), max(raw, 0.0), state.shared_log_shift, raw)


def numerator_weights_reuse(state, artifacts, per_test_products):
    """WSABI mean for another integrand sharing the evaluated locations.

    ``per_test_products`` are p(y* | x*, D, theta_i) L_i on the shifted scale;
    they are warped with the evidence offset eps and weighted by the same Q.
    """
    p = np.asarray(per_test_products, dtype=float)
    zs = np.sqrt(2.0 * (np.maximum(p, state.eps) - state.eps))
    return float(state.eps + 0.5 * zs @ artifacts.Q @ zs)
