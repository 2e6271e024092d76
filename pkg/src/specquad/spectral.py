"""Spectral-mixture kernel parameterisations and their hyperprior.

A point in kernel space is a Gaussian mixture spectral density with diagonal
component covariances, reflected through the origin so the induced kernel is
real. Frequencies are in cycles per normalised input unit.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from scipy.stats import qmc

TWO_PI = 2.0 * np.pi
WEIGHT_TOL = 1e-9


def _canonical_order(means, scales):
    cols = [means[:, d] for d in range(means.shape[1])] + [scales[:, d] for d in range(scales.shape[1])]
    return np.lexsort(tuple(reversed(cols)))


@dataclass(frozen=True, eq=False)
class SpectralMixtureParams:
    """Weights (n,), means (n, D) and scales (n, D) of a spectral mixture.

    Components are stored sorted lexicographically by mean (then scale), so
    two parameterisations that differ only by component order are
    indistinguishable.
    """

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        m = np.array(self.means, dtype=float)
        s = np.array(self.scales, dtype=float)
        n = w.size
        if n < 1:
            raise ValueError("a spectral mixture needs at least one component")
        if m.ndim == 1:
            m = m.reshape(n, -1)
        if s.ndim == 1:
            s = s.reshape(n, -1)
        if m.shape != s.shape or m.shape[0] != n or m.shape[1] < 1:
            raise ValueError(f"shape mismatch: weights {w.shape}, means {m.shape}, scales {s.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise ValueError("non-finite spectral mixture parameters")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must be positive and sum to 1, got {w}")
        if np.any(s <= 0):
            raise ValueError("scales must be strictly positive")
        order = _canonical_order(m, s)
        w, m, s = w[order], m[order], s[order]
        for a in (w, m, s):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "scales", s)

    @property
    def n(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SpectralMixtureParams):
            return NotImplemented
        return (
            self.weights.shape == other.weights.shape
            and self.means.shape == other.means.shape
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.scales, other.scales)
        )

    def __hash__(self):
        return hash((self.weights.tobytes(), self.means.tobytes(), self.scales.tobytes()))

    def to_dict(self):
        return {
            "n": self.n,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
        }

    @classmethod
    def from_dict(cls, obj):
        p = cls(obj["weights"], obj["means"], obj["scales"])
        if "n" in obj and int(obj["n"]) != p.n:
            raise ValueError(f"n={obj['n']} does not match {p.n} weights")
        return p

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class NoiseModel:
    noise_variance: float = 0.01

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")


@dataclass(frozen=True)
class HyperPrior:
    """Prior over spectral mixtures.

    n ~ Uniform{1..n_max}; w ~ Dirichlet(alpha 1_n); each mean coordinate
    ~ Normal(0, mean_sd[d]^2); each scale coordinate ~ LogNormal with
    log-mean ``scale_log_mean[d]`` and log-sd ``scale_log_sd``.
    """

    n_max: int
    alpha: float
    mean_sd: np.ndarray
    scale_log_mean: np.ndarray
    scale_log_sd: float = float(np.log(np.sqrt(2.0)))

    def __post_init__(self):
        object.__setattr__(self, "mean_sd", np.atleast_1d(np.asarray(self.mean_sd, dtype=float)))
        object.__setattr__(self, "scale_log_mean", np.atleast_1d(np.asarray(self.scale_log_mean, dtype=float)))
        if int(self.n_max) < 1 or int(self.n_max) != self.n_max:
            raise ValueError("n_max must be a positive integer")
        if not self.alpha > 0:
            raise ValueError("Dirichlet concentration must be positive")
        if self.mean_sd.shape != self.scale_log_mean.shape:
            raise ValueError("mean_sd and scale_log_mean must have one entry per dimension")
        if not (np.all(self.mean_sd > 0) and np.all(np.isfinite(self.mean_sd))):
            raise ValueError("mean_sd must be finite and positive")
        if not (np.all(np.isfinite(self.scale_log_mean)) and self.scale_log_sd > 0):
            raise ValueError("scale hyperparameters must be finite, log-sd positive")

    @property
    def dim(self):
        return self.mean_sd.size

    @classmethod
    def from_summary(cls, summary, n_max=5, alpha=1.0):
        """Data-driven defaults: mean sd = Nyquist / 5, log-scale mean log(1 / window)."""
        fs = np.asarray(summary.nyquist_frequency, dtype=float)
        window = np.asarray(summary.window_size, dtype=float)
        return cls(n_max, alpha, fs / 5.0, np.log(1.0 / window))

    def to_dict(self):
        return {
            "n_max": int(self.n_max),
            "alpha": float(self.alpha),
            "mean_sd": self.mean_sd.tolist(),
            "scale_log_mean": self.scale_log_mean.tolist(),
            "scale_log_sd": float(self.scale_log_sd),
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["n_max"], obj["alpha"], obj["mean_sd"], obj["scale_log_mean"], obj["scale_log_sd"])


def sample_prior(prior, rng, count, n=None):
    """Draw ``count`` mixtures from ``prior``; ``n`` fixes the component count."""
    if count < 1:
        raise ValueError("count must be at least 1")
    D = prior.dim
    out = []
    for _ in range(count):
        k = int(rng.integers(1, prior.n_max + 1)) if n is None else int(n)
        w = rng.dirichlet(np.full(k, prior.alpha)) if k > 1 else np.ones(1)
        m = rng.normal(0.0, prior.mean_sd, size=(k, D))
        s = np.exp(rng.normal(prior.scale_log_mean, prior.scale_log_sd, size=(k, D)))
        # Dirichlet draws can underflow to exactly 0 for tiny alpha
        w = np.maximum(w, 1e-300)
        out.append(SpectralMixtureParams(w / w.sum(), m, s))
    return out


def sample_prior_qmc(prior, m, rng):
    """``m`` prior draws with scrambled-Sobol continuous coordinates.

    The component count is pseudo-random; weights (via Gamma inverse CDF),
    means and log-scales use inverse-CDF transforms of one Sobol point of
    dimension n_max * (1 + 2D). Successive calls with generators in the same
    state return prefix-consistent streams: the first k of an m-draw equal a
    k-draw.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    N, D = int(prior.n_max), prior.dim
    sobol_seed, count_seed = rng.integers(0, 2**63 - 1, size=2)
    counts = np.random.default_rng(count_seed).integers(1, N + 1, size=m)
    sampler = qmc.Sobol(N * (1 + 2 * D), scramble=True, seed=np.random.default_rng(sobol_seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        U = sampler.random(m)
    U = np.clip(U, 1e-12, 1.0 - 1e-12)
    G = stats.gamma.ppf(U[:, :N], prior.alpha)
    Zm = stats.norm.ppf(U[:, N:N + N * D]).reshape(m, N, D)
    Zs = stats.norm.ppf(U[:, N + N * D:]).reshape(m, N, D)
    means = Zm * prior.mean_sd
    scales = np.exp(prior.scale_log_mean + prior.scale_log_sd * Zs)
    out = []
    for i, k in enumerate(counts):
        g = np.maximum(G[i, :k], 1e-300)
        out.append(SpectralMixtureParams(g / g.sum(), means[i, :k], scales[i, :k]))
    return out


def prior_log_density(prior, theta):
    """Log density of ``theta`` under ``prior`` (counting measure on n)."""
    if theta.n > prior.n_max or theta.dim != prior.dim:
        raise ValueError(f"theta (n={theta.n}, D={theta.dim}) outside prior support")
    a, n = prior.alpha, theta.n
    lp = -np.log(prior.n_max)
    lp += special.gammaln(n * a) - n * special.gammaln(a) + (a - 1.0) * np.sum(np.log(theta.weights))
    lp += np.sum(stats.norm.logpdf(theta.means, 0.0, prior.mean_sd))
    log_s = np.log(theta.scales)
    lp += np.sum(stats.norm.logpdf(log_s, prior.scale_log_mean, prior.scale_log_sd) - log_s)
    return float(lp)


def spectral_density(theta, omega):
    """Symmetrised mixture density S(omega); ``omega`` is (D,) or (..., D)."""
    omega = np.asarray(omega, dtype=float)
    scalar = omega.ndim == 1
    om = omega[None, :] if scalar else omega
    out = np.zeros(om.shape[:-1])
    for w, m, s in zip(theta.weights, theta.means, theta.scales):
        norm = np.prod(1.0 / (np.sqrt(TWO_PI) * s))
        pos = np.exp(-0.5 * np.sum(((om - m) / s) ** 2, axis=-1))
        neg = np.exp(-0.5 * np.sum(((om + m) / s) ** 2, axis=-1))
        out += 0.5 * w * norm * (pos + neg)
    return float(out[0]) if scalar else out


def kernel_eval(theta, rho):
    """Stationary kernel k(rho) recovered from the spectral mixture.

    k(rho) = sum_j w_j exp(-2 pi^2 sum_d s_jd^2 rho_d^2) cos(2 pi m_j . rho).
    ``rho`` is (D,) or (..., D).
    """
    rho = np.asarray(rho, dtype=float)
    scalar = rho.ndim == 1
    r = rho[None, :] if scalar else rho
    out = np.zeros(r.shape[:-1])
    for w, m, s in zip(theta.weights, theta.means, theta.scales):
        quad = np.sum((s * r) ** 2, axis=-1)
        phase = np.sum(m * r, axis=-1)
        out += w * np.exp(-2.0 * np.pi**2 * quad) * np.cos(TWO_PI * phase)
    return float(out[0]) if scalar else out


def gram_matrix(theta, X1, X2=None, noise=None, add_noise=False):
    """Kernel matrix k(x_i - x_j); noise variance joins the diagonal when
    ``add_noise`` is set and the two input sets coincide."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    same = X2 is None
    X2 = X1 if same else np.atleast_2d(np.asarray(X2, dtype=float))
    K = kernel_eval(theta, X1[:, None, :] - X2[None, :, :])
    if add_noise:
        if not (same or (X1.shape == X2.shape and np.array_equal(X1, X2))):
            raise ValueError("noise can only be added to a square Gram matrix of one input set")
        K[np.diag_indices_from(K)] += (noise or NoiseModel()).noise_variance
    return K
