"""Kernel between spectral mixtures from their energy-distance MMD.

    e(a, b) = w_a' M_ab w_b - 1/2 w_a' M_aa w_a - 1/2 w_b' M_bb w_b
    d(a, b) = sqrt(e(a, b))
    kappa(a, b) = lam^2 exp(-d(a, b)^q / l^2)

where ``M_ab[i, j]`` is the Euclidean distance between the stacked
component parameters (m_i, s_i) of ``a`` and (m_j, s_j) of ``b``.

``e`` is a squared Hilbert-space distance between the two weighted component
measures, so ``d`` is a metric and kappa is positive definite for both
q = 1 and q = 2. Exponentiating ``e`` itself would be valid only for q = 1.

Every entry of a distance matrix is accumulated elementwise over component
pairs in a fixed order, so an entry never depends on the shape of the batch
it was computed in.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from specquad.linalg import CholeskyError, cho_solve, jittered_cholesky, logdet_from_cholesky

LOG_BOUNDS = (-6.0, 6.0)
SURROGATE_NOISE = 1e-6
NEGATIVE_TOL = 1e-12


@dataclass(frozen=True)
class HyperKernelParams:
    lam: float = 1.0
    length: float = 1.0
    q: int = 1
    symmetrize: bool = False

    def __post_init__(self):
        if not (self.lam > 0 and self.length > 0):
            raise ValueError("output scale and length scale must be positive")
        if self.q not in (1, 2):
            raise ValueError(f"q must be 1 or 2, got {self.q}")

    def with_logs(self, log_lam, log_length):
        return HyperKernelParams(float(np.exp(log_lam)), float(np.exp(log_length)), self.q, self.symmetrize)

    def to_dict(self):
        return {"lam": self.lam, "length": self.length, "q": self.q, "symmetrize": self.symmetrize}

    @classmethod
    def from_dict(cls, obj):
        return cls(float(obj["lam"]), float(obj["length"]), int(obj.get("q", 1)), bool(obj.get("symmetrize", False)))


def _pair_distance(c1, p, c2, q):
    sq = np.zeros((c1.shape[0], c2.shape[0]))
    for e in range(c1.shape[2]):
        diff = c1[:, p, e][:, None] - c2[:, q, e][None, :]
        sq += diff * diff
    return np.sqrt(sq)


def _cross_terms(w1, c1, w2, c2):
    # Pairs are visited as unordered {p, q} with both orders summed first, so
    # entry (a, b) of (bank1, bank2) equals entry (b, a) of (bank2, bank1)
    # bitwise, and zero-weight padding never changes a result.
    P = max(w1.shape[1], w2.shape[1])
    w1, w2 = np.pad(w1, ((0, 0), (0, P - w1.shape[1]))), np.pad(w2, ((0, 0), (0, P - w2.shape[1])))
    c1 = np.pad(c1, ((0, 0), (0, P - c1.shape[1]), (0, 0)))
    c2 = np.pad(c2, ((0, 0), (0, P - c2.shape[1]), (0, 0)))
    out = np.zeros((w1.shape[0], w2.shape[0]))
    for p in range(P):
        out += (w1[:, p][:, None] * w2[:, p][None, :]) * _pair_distance(c1, p, c2, p)
        for q in range(p + 1, P):
            t_pq = (w1[:, p][:, None] * w2[:, q][None, :]) * _pair_distance(c1, p, c2, q)
            t_qp = (w1[:, q][:, None] * w2[:, p][None, :]) * _pair_distance(c1, q, c2, p)
            out += t_pq + t_qp
    return out


def _self_terms(w, c):
    # same pair order as _cross_terms, so d(theta, theta) cancels exactly
    K, P, E = c.shape
    out = np.zeros(K)

    def dist(p, q):
        sq = np.zeros(K)
        for e in range(E):
            diff = c[:, p, e] - c[:, q, e]
            sq += diff * diff
        return np.sqrt(sq)

    for p in range(P):
        out += (w[:, p] * w[:, p]) * dist(p, p)
        for q in range(p + 1, P):
            out += (w[:, p] * w[:, q]) * dist(p, q) + (w[:, q] * w[:, p]) * dist(q, p)
    return out


class MixtureBank:
    """Zero-padded arrays for a list of spectral mixtures.

    ``weights`` is (K, P) and ``comps`` (K, P, 2D) with rows (m_i, s_i);
    padding slots carry weight 0. With ``symmetrize`` each component also
    appears reflected, (-m_i, s_i), and every weight is halved.
    """

    def __init__(self, weights, comps, self_terms=None):
        self.weights = np.asarray(weights, dtype=float)
        self.comps = np.asarray(comps, dtype=float)
        self.self_terms = _self_terms(self.weights, self.comps) if self_terms is None else self_terms

    @classmethod
    def from_params(cls, thetas, symmetrize=False):
        thetas = list(thetas)
        if not thetas:
            raise ValueError("empty list of spectral mixtures")
        D = thetas[0].dim
        mult = 2 if symmetrize else 1
        P = mult * max(t.n for t in thetas)
        W = np.zeros((len(thetas), P))
        C = np.zeros((len(thetas), P, 2 * D))
        for k, t in enumerate(thetas):
            comps = np.hstack([t.means, t.scales])
            w = t.weights
            if symmetrize:
                comps = np.vstack([comps, np.hstack([-t.means, t.scales])])
                w = np.concatenate([w, w]) * 0.5
            W[k, : w.size] = w
            C[k, : w.size] = comps
        return cls(W, C)

    def __len__(self):
        return self.weights.shape[0]

    @property
    def width(self):
        return self.weights.shape[1]

    def padded(self, P):
        if P == self.width:
            return self
        extra = P - self.width
        W = np.pad(self.weights, ((0, 0), (0, extra)))
        C = np.pad(self.comps, ((0, 0), (0, extra), (0, 0)))
        return MixtureBank(W, C, self.self_terms)

    def concat(self, other):
        P = max(self.width, other.width)
        a, b = self.padded(P), other.padded(P)
        return MixtureBank(
            np.vstack([a.weights, b.weights]),
            np.concatenate([a.comps, b.comps]),
            np.concatenate([a.self_terms, b.self_terms]),
        )

    def take(self, index):
        index = np.asarray(index, dtype=int)
        return MixtureBank(self.weights[index], self.comps[index], self.self_terms[index])


def _as_bank(thetas, symmetrize=False):
    if isinstance(thetas, MixtureBank):
        return thetas
    return MixtureBank.from_params(thetas, symmetrize)


def _snap_zero(e, scale):
    """Zero out cancellation noise; genuinely negative values are an error.

    Equal measures leave |e| at rounding level, which the square root
    would inflate to ~1e-8.
    """
    tol = NEGATIVE_TOL * np.maximum(1.0, scale)
    if np.any(e < -tol):
        raise FloatingPointError(f"energy distance {e.min():.3g} below tolerance")
    return np.where(e <= tol, 0.0, e)


def energy_matrix(bank1, bank2):
    """Squared discrepancy e between every pair of mixtures in two banks."""
    cross = _cross_terms(bank1.weights, bank1.comps, bank2.weights, bank2.comps)
    e = cross - 0.5 * (bank1.self_terms[:, None] + bank2.self_terms[None, :])
    return _snap_zero(e, np.abs(cross))


def mmd_matrix(bank1, bank2):
    """MMD metric d = sqrt(e) between every pair of mixtures in two banks."""
    return np.sqrt(energy_matrix(bank1, bank2))


def energy_distance(theta1, theta2, symmetrize=False):
    b1 = MixtureBank.from_params([theta1], symmetrize)
    b2 = MixtureBank.from_params([theta2], symmetrize)
    return float(energy_matrix(b1, b2)[0, 0])


def mmd_distance(theta1, theta2, symmetrize=False):
    return float(np.sqrt(energy_distance(theta1, theta2, symmetrize)))


def kernel_from_distance(d, params):
    dq = d if params.q == 1 else d * d
    return params.lam**2 * np.exp(-dq / params.length**2)


def hyper_gram(thetas1, thetas2, params):
    """Matrix of kappa over two lists (or banks) of spectral mixtures."""
    b1 = _as_bank(thetas1, params.symmetrize)
    b2 = b1 if thetas2 is thetas1 else _as_bank(thetas2, params.symmetrize)
    return kernel_from_distance(mmd_matrix(b1, b2), params)


def hyper_kernel(theta1, theta2, params):
    return float(hyper_gram([theta1], [theta2], params)[0, 0])


def surrogate_log_likelihood(dist, z, log_lam, log_length, q=1, noise=SURROGATE_NOISE, grad=True):
    """Log marginal likelihood of ``z`` under the zero-mean surrogate GP and
    its gradient with respect to (log lam, log l).

    ``dist`` is the precomputed MMD matrix between the observation locations.
    """
    z = np.asarray(z, dtype=float)
    h = z.size
    lam2, l2 = np.exp(2.0 * log_lam), np.exp(2.0 * log_length)
    Dq = dist if q == 1 else dist * dist
    E = np.exp(-Dq / l2)
    K = lam2 * E
    K[np.diag_indices(h)] += noise
    L, _ = jittered_cholesky(K)
    a = cho_solve(L, z)
    lml = -0.5 * z @ a - 0.5 * logdet_from_cholesky(L) - 0.5 * h * np.log(2.0 * np.pi)
    if not grad:
        return float(lml)
    W = np.outer(a, a) - cho_solve(L, np.eye(h))
    dK_lam = 2.0 * lam2 * E
    dK_len = lam2 * E * (2.0 * Dq / l2)
    g = 0.5 * np.array([np.sum(W * dK_lam), np.sum(W * dK_len)])
    return float(lml), g


def log_hypers_gradient(thetas, z, params, noise=SURROGATE_NOISE):
    """Gradient of the surrogate log marginal likelihood over (log lam, log l)."""
    bank = _as_bank(thetas, params.symmetrize)
    dist = mmd_matrix(bank, bank)
    _, g = surrogate_log_likelihood(dist, z, np.log(params.lam), np.log(params.length), params.q, noise)
    return g


def _heuristic_start(dist, z, q):
    off = dist[np.triu_indices(dist.shape[0], 1)]
    off = off[off > 0]
    scale = np.median(off if q == 1 else off * off) if off.size else 1.0
    lam = np.sqrt(np.mean(np.square(z))) if np.any(z) else 1.0
    x0 = np.array([np.log(lam), 0.5 * np.log(scale)])
    return np.clip(x0, *LOG_BOUNDS)


def optimize_hypers(dist, z, rng, q=1, symmetrize=False, restarts=3, noise=SURROGATE_NOISE, start=None):
    """Maximise the surrogate evidence over log-hyperparameters.

    L-BFGS-B in the box ``LOG_BOUNDS``; starts from a data heuristic (and
    ``start`` if given) plus ``restarts`` uniform random points.
    """
    z = np.asarray(z, dtype=float)

    def objective(x):
        try:
            v, g = surrogate_log_likelihood(dist, z, x[0], x[1], q, noise)
        except CholeskyError:
            return 1e12, np.zeros(2)
        return -v, -g

    starts = [_heuristic_start(dist, z, q)]
    if start is not None:
        starts.append(np.clip([np.log(start.lam), np.log(start.length)], *LOG_BOUNDS))
    starts += [rng.uniform(*LOG_BOUNDS, size=2) for _ in range(restarts)]
    best_x, best_f = None, np.inf
    for x0 in starts:
        res = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=[LOG_BOUNDS] * 2)
        if np.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = res.x, res.fun
    if best_x is None:
        best_x = starts[0]
    base = HyperKernelParams(q=q, symmetrize=symmetrize)
    return base.with_logs(*best_x)
