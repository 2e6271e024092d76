"""Choosing which spectral mixtures to evaluate next.

Under the linearised warp the evidence ``Z`` is an affine function of the
surrogate ``g``, so ``Z`` and the surrogate observations ``z_B`` at a
candidate batch B are jointly Gaussian:

    Cov(z_B)     = Sigma_BB + noise I
    cov(z_B, Z)  = c_B,  c_j = int mu(t) Sigma(t, theta_j) dpi(t)
    Var(Z)       = int int mu(t) Sigma(t, t') mu(t') dpi dpi'

and the expected information gain about Z is

    alpha(B) = H[z_B] - H[z_B | Z] = -1/2 log(1 - c_B' Cov(z_B)^-1 c_B / Var(Z)).

The prior integrals use the Monte Carlo samples of the quadrature cache.
Batches are built greedily: each slot maximises the gain in joint alpha from
adding one candidate to the batch so far, which equals conditioning on the
earlier slots with fantasised observations at the surrogate mean (the value
of a Gaussian observation does not change conditional covariances).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from specquad.hyperkernel import MixtureBank, kernel_from_distance, mmd_matrix
from specquad.linalg import cho_solve, jittered_cholesky, solve_lower
from specquad.quadrature import evidence_moments, quadrature_weights
from specquad.spectral import SpectralMixtureParams, sample_prior

MODES = ("info", "uncertainty", "random")
VAR_FLOOR = 1e-14
LOGIT_BOUND = 12.0
BOUND_SDS = 6.0
FD_STEP = 1e-4


@dataclass
class AcquisitionContext:
    state: object
    cache: object
    artifacts: object = None
    batch_size: int = 1
    var_z: float = field(init=False)
    mean_z: float = field(init=False)
    mu_samples: np.ndarray = field(init=False)
    cross_weights: np.ndarray = field(init=False)
    bank: MixtureBank = field(init=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.cache.kernel_cross.shape[1] != self.state.h:
            raise ValueError("Monte Carlo cache was built against different observations")
        if self.cache.double_integral is None:
            raise ValueError("acquisition needs the double kernel integral")
        if self.artifacts is None:
            self.artifacts = quadrature_weights(self.state, self.cache)
        kc = self.cache.kernel_cross
        self.mu_samples = kc @ self.state.weights_z
        self.cross_weights = cho_solve(self.state.chol, kc.T @ self.mu_samples) / self.cache.m
        ev = evidence_moments(self.state, self.cache, self.artifacts)
        self.var_z, self.mean_z = ev.raw_variance, ev.mean
        self.bank = self.state.bank.concat(self.cache.bank)

    @property
    def h(self):
        return self.state.h

    @property
    def determined(self):
        """True once Var(Z) is negligible relative to E[Z]^2 (scale-free)."""
        return not self.var_z > VAR_FLOOR * self.mean_z**2

    @property
    def m(self):
        return self.cache.m


def _bank_from_arrays(weights, means, scales, symmetrize):
    comps = np.concatenate([means, scales], axis=-1)
    if symmetrize:
        comps = np.concatenate([comps, np.concatenate([-means, scales], axis=-1)], axis=1)
        weights = 0.5 * np.concatenate([weights, weights], axis=1)
    return MixtureBank(weights, comps)


def _as_bank(ctx, thetas):
    if isinstance(thetas, MixtureBank):
        return thetas
    return MixtureBank.from_params(thetas, ctx.state.hyper.symmetrize)


class _Scorer:
    """Vectorised acquisition scores for candidates given a partial batch."""

    def __init__(self, ctx, mode="info"):
        self.ctx = ctx
        self.mode = mode
        self.hyper = ctx.state.hyper
        self.noise = ctx.state.noise
        self.chosen = None  # MixtureBank of the partial batch
        self.ref = ctx.bank
        self._set_batch_stats()

    def _kernels(self, bank):
        k = kernel_from_distance(mmd_matrix(bank, self.ref), self.hyper)
        h, m = self.ctx.h, self.ctx.m
        return k[:, :h], k[:, h:h + m], k[:, h + m:]

    def _basic(self, bank):
        kT, kS, kB = self._kernels(bank)
        T = solve_lower(self.ctx.state.chol, kT.T)
        mu = kT @ self.ctx.state.weights_z
        var = self.hyper.lam**2 - np.sum(T * T, axis=0)
        c = kS @ self.ctx.mu_samples / self.ctx.m - kT @ self.ctx.cross_weights
        return T, kB, mu, var, c

    def _set_batch_stats(self):
        if self.chosen is None:
            self.k = 0
            self.r_base = 0.0
            return
        T, kB, mu, var, c = self._basic(self.chosen)
        S = kB - T.T @ T
        S = 0.5 * (S + S.T)
        S[np.diag_indices_from(S)] += self.noise
        self.k = S.shape[0]
        self.T_B = T
        self.L_B, _ = jittered_cholesky(S)
        self.c_B = c
        self.Cinv_c = cho_solve(self.L_B, c)
        self.r_base = float(c @ self.Cinv_c)

    @property
    def base_value(self):
        """Score of the partial batch alone (0 before the first slot)."""
        if self.mode == "uncertainty" or self.ctx.determined or not self.k:
            return 0.0
        r = min(max(self.r_base / self.ctx.var_z, 0.0), 1.0 - 1e-15)
        return float(-0.5 * np.log1p(-r))

    def add(self, bank):
        self.chosen = bank if self.chosen is None else self.chosen.concat(bank)
        self.ref = self.ctx.bank.concat(self.chosen)
        self._set_batch_stats()

    def scores(self, bank):
        T, kB, mu, var, c = self._basic(bank)
        s = var + self.noise
        u = c
        if self.k:
            cross = kB - T.T @ self.T_B  # (C, k) posterior covariance with the batch
            G = solve_lower(self.L_B, cross.T)  # (k, C)
            s = s - np.sum(G * G, axis=0)
            u = c - cross @ self.Cinv_c
        if self.mode == "uncertainty":
            return mu**2 * np.maximum(s - self.noise, 0.0)
        if self.ctx.determined:
            return np.zeros(len(c))
        V = self.ctx.var_z
        r = (self.r_base + u * u / np.maximum(s, 1e-300)) / V
        return -0.5 * np.log1p(-np.clip(r, 0.0, 1.0 - 1e-15))


def acquisition_value(ctx, candidates):
    """Expected information gain about the evidence from observing the batch."""
    bank = _as_bank(ctx, candidates)
    if ctx.determined:
        return 0.0
    V = ctx.var_z
    sc = _Scorer(ctx)
    T, _, _, _, c = sc._basic(bank)
    kBB = kernel_from_distance(mmd_matrix(bank, bank), ctx.state.hyper)
    S = kBB - T.T @ T
    S = 0.5 * (S + S.T)
    S[np.diag_indices_from(S)] += ctx.state.noise
    L, _ = jittered_cholesky(S)
    r = float(c @ cho_solve(L, c)) / V
    return float(-0.5 * np.log1p(-min(max(r, 0.0), 1.0 - 1e-15)))


def conditioned_evidence_variance(ctx, candidates):
    """Var(Z) after observing the batch (value-independent for Gaussians)."""
    bank = _as_bank(ctx, candidates)
    sc = _Scorer(ctx)
    sc.add(bank)
    return ctx.var_z - sc.r_base


def uncertainty_sampling_value(ctx, theta):
    """Variance of the linearised likelihood surrogate at ``theta``."""
    bank = _as_bank(ctx, [theta])
    _, _, mu, var, _ = _Scorer(ctx)._basic(bank)
    return float(mu[0] ** 2 * max(var[0], 0.0))


def encode(theta):
    """Unconstrained coordinates: weight logits (first pinned to 0), means, log scales."""
    logits = np.log(theta.weights) - np.log(theta.weights[0])
    return np.concatenate([logits[1:], theta.means.ravel(), np.log(theta.scales).ravel()])


def decode(U, n, D):
    U = np.atleast_2d(U)
    C = U.shape[0]
    logits = np.concatenate([np.zeros((C, 1)), U[:, : n - 1]], axis=1)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    means = U[:, n - 1: n - 1 + n * D].reshape(C, n, D)
    scales = np.exp(U[:, n - 1 + n * D:].reshape(C, n, D))
    return w, means, scales


def to_params(u, n, D):
    w, means, scales = decode(u, n, D)
    return SpectralMixtureParams(w[0], means[0], scales[0])


def bounds_for(prior, n):
    b = [(-LOGIT_BOUND, LOGIT_BOUND)] * (n - 1)
    for _ in range(n):
        b += [(-BOUND_SDS * s, BOUND_SDS * s) for s in prior.mean_sd]
    for _ in range(n):
        b += [(mu - BOUND_SDS * prior.scale_log_sd, mu + BOUND_SDS * prior.scale_log_sd) for mu in prior.scale_log_mean]
    return b


@dataclass
class SlotResult:
    theta: SpectralMixtureParams
    value: float
    init_value: float


def _optimize_slot(scorer, prior, rng, restarts, pool, maxiter, fd_step):
    D = prior.dim
    symmetrize = scorer.hyper.symmetrize

    base = scorer.base_value

    def score_u(U, n):
        # marginal gain over the partial batch; same argmax as the joint value
        w, means, scales = decode(U, n, D)
        return scorer.scores(_bank_from_arrays(w, means, scales, symmetrize)) - base

    best = None
    best_init = -np.inf
    for n in range(1, prior.n_max + 1):
        bounds = bounds_for(prior, n)
        lo, hi = np.array(bounds).T if bounds else (np.zeros(0), np.zeros(0))
        cands = sample_prior(prior, rng, max(pool, restarts), n=n)
        U0 = np.clip(np.array([encode(t) for t in cands]), lo, hi)
        v0 = score_u(U0, n)
        order = np.argsort(-v0, kind="stable")[:restarts]
        best_init = max(best_init, float(v0[order[0]]))
        dim = U0.shape[1]
        eye = np.eye(dim) * fd_step
        # acquisition values can be tiny; rescale so the optimizer's
        # tolerances act on O(1) numbers
        scale = float(v0[order[0]]) if v0[order[0]] > 0 else 1.0

        def fun(u):
            vals = score_u(np.vstack([u[None, :], u + eye, u - eye]), n) / scale
            g = (vals[1:1 + dim] - vals[1 + dim:]) / (2.0 * fd_step)
            return -vals[0], -g

        for i in order:
            u_best, v_best = U0[i], float(v0[i])
            try:
                res = optimize.minimize(fun, U0[i], jac=True, method="L-BFGS-B", bounds=bounds,
                                        options={"maxiter": maxiter})
                if np.all(np.isfinite(res.x)) and -res.fun * scale > v_best:
                    u_best, v_best = res.x, float(score_u(res.x[None, :], n)[0])
            except (ValueError, np.linalg.LinAlgError, FloatingPointError):
                pass
            # ties go to the smaller component count
            if best is None or v_best > best[1]:
                best = (n, v_best, u_best)
    n, v, u = best
    return SlotResult(to_params(u, n, D), v + base, best_init + base)


def optimize_acquisition(ctx, prior, restarts=8, rng=None, mode="info", pool=None, maxiter=50,
                         fd_step=FD_STEP, return_details=False):
    """Greedy batch of ``ctx.batch_size`` mixtures maximising the acquisition.

    For every slot each component count 1..n_max is tried; ``restarts``
    starting points per count are the best of ``pool`` prior draws and are
    refined by L-BFGS-B with central finite-difference gradients in the
    unconstrained coordinates. ``mode='random'`` draws the batch from the
    prior instead.
    """
    if mode not in MODES:
        raise ValueError(f"unknown acquisition mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    if mode == "random":
        batch = sample_prior(prior, rng, ctx.batch_size)
        return (batch, []) if return_details else batch
    pool = pool if pool is not None else 4 * restarts
    scorer = _Scorer(ctx, mode)
    batch, details = [], []
    for _ in range(ctx.batch_size):
        res = _optimize_slot(scorer, prior, rng, restarts, pool, maxiter, fd_step)
        batch.append(res.theta)
        details.append(res)
        scorer.add(MixtureBank.from_params([res.theta], scorer.hyper.symmetrize))
    return (batch, details) if return_details else batch
