"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line with the measured quantities; the lines
are printed as they happen and again in the terminal summary (see
conftest.py). Thresholds are the stated ones and are never relaxed here.
"""

import json
import time

import numpy as np
import pytest
from scipy.special import logsumexp

from oracles import (batched_sm1_log_likelihood, conditional_entropy_gain, energy_mmd, evidence_joint_covariance,
                     fourier_kernel, naive_gram, naive_lml, naive_predict)
from specquad import acquisition as aq
from specquad import gp, hyperkernel as hk, pipeline, quadrature as qd
from specquad.data import Dataset, normalize, summarize
from specquad.pipeline import RunConfig
from specquad.spectral import (HyperPrior, NoiseModel, SpectralMixtureParams, kernel_eval, sample_prior,
                               sample_prior_qmc)
from specquad.synthetic import TWO_COMPONENT, sample_dataset

pytestmark = pytest.mark.slow

REPORT = {}


def report(criterion, ok, detail, seconds):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f}s]"
    REPORT[criterion] = line
    print("\n" + line)
    return ok


# ---------------------------------------------------------------- 1: kernel
def test_criterion_01_kernel_vs_fourier_quadrature():
    t0 = time.perf_counter()
    rng = np.random.default_rng([1, 0])
    worst = 0.0
    for i in range(200):
        D = 1 + i % 3
        prior = HyperPrior(5, 1.0, np.full(D, 3.0), np.zeros(D))
        theta = sample_prior(prior, rng, 1)[0]
        rho = rng.uniform(-0.8, 0.8, size=D)
        worst = max(worst, abs(kernel_eval(theta, rho) - fourier_kernel(theta, rho)))
    ok = worst <= 1e-5
    assert report(1, ok, f"200 (theta, rho), D in 1..3: max |closed - quadrature| = {worst:.2e} (<= 1e-5)",
                  time.perf_counter() - t0)


# ---------------------------------------------------------------- 2: GP
def test_criterion_02_gp_vs_dense_inverse():
    t0 = time.perf_counter()
    rng = np.random.default_rng([2, 0])
    worst_lml = worst_mean = worst_cov = 0.0
    for i in range(50):
        D = 1 + i % 3
        n, T = int(rng.integers(2, 31)), int(rng.integers(1, 8))
        theta = sample_prior(HyperPrior(5, 1.0, np.full(D, 3.0), np.zeros(D)), rng, 1)[0]
        noise = float(np.exp(rng.uniform(np.log(1e-3), np.log(0.5))))
        X, Xs = rng.uniform(size=(n, D)), rng.uniform(size=(T, D))
        y = rng.normal(size=n)
        K = naive_gram(theta, X, X) + noise * np.eye(n)
        lml = gp.log_marginal_likelihood(theta, Dataset(X, y), NoiseModel(noise))
        ref = naive_lml(K, y)
        worst_lml = max(worst_lml, abs(lml - ref) / abs(ref))
        mean, cov = naive_predict(K, naive_gram(theta, X, Xs), naive_gram(theta, Xs, Xs), y)
        post = gp.predictive_posterior(theta, Dataset(X, y), Xs, NoiseModel(noise), full_cov=True,
                                       observation=False)
        worst_mean = max(worst_mean, np.max(np.abs(post.mean - mean) / np.maximum(np.abs(mean), 1e-12)))
        worst_cov = max(worst_cov, np.max(np.abs(post.covariance - cov)) / np.max(np.abs(cov)))
    ok = max(worst_lml, worst_mean, worst_cov) <= 1e-8
    assert report(2, ok, f"50 instances: max rel error lml {worst_lml:.1e}, mean {worst_mean:.1e}, "
                         f"cov {worst_cov:.1e} (<= 1e-8)", time.perf_counter() - t0)


# ---------------------------------------------------------------- 3: hyper-kernel
def test_criterion_03_hyper_kernel_validity():
    t0 = time.perf_counter()
    rng = np.random.default_rng([3, 0])
    prior = HyperPrior(5, 1.0, np.full(2, 3.0), np.zeros(2))
    thetas = [sample_prior(prior, rng, 1, n=1 + i % 5)[0] for i in range(200)]
    bank = hk.MixtureBank.from_params(thetas)
    dist = hk.mmd_matrix(bank, bank)
    med = float(np.median(dist[np.triu_indices(200, 1)]))
    eig = {}
    for q in (1, 2):
        for length in (0.3 * np.sqrt(med), np.sqrt(med), 3 * np.sqrt(med)):
            p = hk.HyperKernelParams(lam=1.7, length=length, q=q)
            G = hk.kernel_from_distance(dist, p)
            eig[(q, round(length, 3))] = np.linalg.eigvalsh(G).min() / p.lam**2
    min_eig = min(eig.values())

    sym = tri = self_d = 0.0
    raw_tri_violations = 0
    for _ in range(1000):
        a, b, c = sample_prior(prior, rng, 3)
        dab, dba = hk.mmd_distance(a, b), hk.mmd_distance(b, a)
        self_d = max(self_d, hk.mmd_distance(a, a))
        sym = max(sym, abs(dab - dba))
        tri = max(tri, dab - hk.mmd_distance(a, c) - hk.mmd_distance(c, b))
        eab = energy_mmd(a, b)
        if eab > energy_mmd(a, c) + energy_mmd(c, b) + 1e-9:
            raw_tri_violations += 1

    split = 0.0
    for _ in range(200):
        a, b = sample_prior(prior, rng, 2)
        j = int(rng.integers(a.n))
        frac = rng.uniform(0.1, 0.9)
        w = np.concatenate([a.weights, [a.weights[j] * (1 - frac)]])
        w[j] *= frac
        s = SpectralMixtureParams(w, np.vstack([a.means, a.means[j]]), np.vstack([a.scales, a.scales[j]]))
        split = max(split, abs(hk.mmd_distance(s, b) - hk.mmd_distance(a, b)))

    ok = min_eig >= -1e-8 and self_d == 0.0 and sym <= 1e-9 and tri <= 1e-9 and split <= 1e-12
    assert report(3, ok, f"min eig/lam^2 {min_eig:.1e} (q=1,2; 3 lengths); self {self_d:.0e}, asym {sym:.0e}, "
                         f"max triangle excess {tri:.1e} over 1000 triples; split {split:.1e} "
                         f"(squared distance alone breaks the triangle on {raw_tri_violations}/1000)",
                  time.perf_counter() - t0)


# ---------------------------------------------------------------- 4: evidence oracle
ONE_COMPONENT = SpectralMixtureParams([1.0], [[2.0]], [[0.4]])


def evidence_case(seed, h=100, m=1000, oracle_draws=10**6):
    noise = NoiseModel(0.01)
    raw = sample_dataset(ONE_COMPONENT, 10, np.random.default_rng([4, seed, 0]), noise)
    train, _ = normalize(raw)
    prior = HyperPrior.from_summary(summarize(train), n_max=1)
    thetas = sample_prior(prior, np.random.default_rng([4, seed, 1]), h)
    ll = np.array([gp.log_marginal_likelihood(t, train, noise) for t in thetas])
    bank = hk.MixtureBank.from_params(thetas)
    dist = hk.mmd_matrix(bank, bank)
    hyper = hk.optimize_hypers(dist, qd.warp(ll)[3], np.random.default_rng([4, seed, 2]))
    state = qd.make_surrogate(thetas, ll, hyper, bank=bank, dist=dist)
    cache = qd.build_mc_cache(state, prior, m, np.random.default_rng([4, seed, 3]))
    ev = qd.evidence_moments(state, cache, qd.quadrature_weights(state, cache))

    # plain Monte Carlo straight from the prior's definition
    rng = np.random.default_rng([4, seed, 4])
    means = rng.normal(0.0, prior.mean_sd[0], oracle_draws)
    scales = np.exp(rng.normal(prior.scale_log_mean[0], prior.scale_log_sd, oracle_draws))
    lls = batched_sm1_log_likelihood(means, scales, train.inputs, train.targets, noise.noise_variance)
    oracle = logsumexp(lls) - np.log(oracle_draws)
    return ev.log_mean, ev.log_sd, oracle


def test_criterion_04_evidence_vs_plain_monte_carlo():
    t0 = time.perf_counter()
    rows = [evidence_case(seed) for seed in range(5)]
    zs = [(bq - mc) / sd for bq, sd, mc in rows]
    hits = sum(abs(z) <= 3 for z in zs)
    detail = ", ".join(f"{bq:.3f}+-{sd:.3f} vs {mc:.3f}" for bq, sd, mc in rows)
    ok = hits >= 4
    assert report(4, ok, f"{hits}/5 seeds within 3 sd (z = {', '.join(f'{z:.2f}' for z in zs)}); {detail}",
                  time.perf_counter() - t0)


# ---------------------------------------------------------------- 5: MC sensitivity
def test_criterion_05_mc_sensitivity():
    t0 = time.perf_counter()
    data = sample_dataset(TWO_COMPONENT, 100, np.random.default_rng([5, 0]), NoiseModel(0.01))
    cfg = RunConfig(seed=5, max_evals=100, test_fraction=0.2)
    rows = pipeline.run_mc_sensitivity(cfg, [100, 1000, 10000], [50, 100], repeats=5, data=data)
    cell = {(r["h"], r["m"]): r for r in rows}
    ok, parts = True, []
    for h in (50, 100):
        rel = abs(cell[h, 1000]["mean"] - cell[h, 10000]["mean"]) / cell[h, 10000]["mean"]
        sems = [cell[h, m]["sem"] / cell[h, 10000]["mean"] for m in (100, 1000, 10000)]
        ok &= rel < 0.1 and sems[2] < sems[0]
        parts.append(f"h={h}: |m1e3-m1e4|/m1e4 = {rel:.3f}, relative SEM m=100/1e3/1e4 = "
                     + "/".join(f"{s:.2e}" for s in sems))
    assert report(5, ok, "; ".join(parts), time.perf_counter() - t0)


# ---------------------------------------------------------------- 6: acquisition
def random_context(rng):
    D = int(rng.integers(1, 3))
    prior = HyperPrior(int(rng.integers(1, 4)), 1.0, np.full(D, 2.0), np.zeros(D))
    n = 15
    X = rng.uniform(size=(n, D))
    y = np.sin(6 * X.sum(axis=1)) + 0.2 * rng.normal(size=n)
    train = Dataset(X, (y - y.mean()) / y.std())
    h = int(rng.integers(3, 16))
    thetas = sample_prior(prior, rng, h)
    ll = np.array([gp.log_marginal_likelihood(t, train, NoiseModel()) for t in thetas])
    hyper = hk.HyperKernelParams(lam=float(rng.uniform(0.5, 2.0)), length=float(rng.uniform(0.7, 2.5)),
                                 q=int(rng.integers(1, 3)))
    state = qd.make_surrogate(thetas, ll, hyper)
    cache = qd.build_mc_cache(state, prior, 60, rng)
    return prior, aq.AcquisitionContext(state, cache)


def test_criterion_06_acquisition_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng([6, 0])
    worst, min_alpha, worst_orth, k_far = 0.0, np.inf, 0.0, 0.0
    for _ in range(50):
        prior, ctx = random_context(rng)
        gram = (lambda a, b, hyper=ctx.state.hyper: hk.hyper_gram(a, b, hyper))
        cands = sample_prior(prior, rng, 8)
        values = []
        for c in cands:
            v = aq.acquisition_value(ctx, [c])
            ref = conditional_entropy_gain(evidence_joint_covariance(ctx.state, ctx.cache, [c], gram), 1)
            worst = max(worst, abs(v - ref))
            values.append(v)
        for b in (2, 3):
            values.append(aq.acquisition_value(ctx, cands[:b]))
        min_alpha = min(min_alpha, min(values))
        # far enough that the hyper-kernel to every observation and sample is negligible
        far = SpectralMixtureParams([1.0], np.full((1, prior.dim), 1e5), np.full((1, prior.dim), 0.05))
        k_far = max(gram([far], list(ctx.state.thetas) + list(ctx.cache.samples)).max(), k_far)
        worst_orth = max(worst_orth, aq.acquisition_value(ctx, [far]) / max(values))
    ok = worst <= 1e-8 and min_alpha >= -1e-10 and worst_orth < 1e-6
    assert report(6, ok, f"50 contexts: max |alpha - direct conditioning| = {worst:.1e} (<= 1e-8); "
                         f"min alpha {min_alpha:.1e}; orthogonal candidate (max kernel {k_far:.0e}): alpha/max alpha "
                         f"{worst_orth:.1e} (< 1e-6)",
                  time.perf_counter() - t0)


# ---------------------------------------------------------------- 7 & 8: ablation
ABLATION_SEEDS = range(10)
ABLATION = dict(test_fraction=0.2, initial=20, batch=20, max_evals=200, mc_samples=200, restarts=1, pool=8,
                maxiter=15, hyper_restarts=2)


def ablation_data(seed):
    return sample_dataset(TWO_COMPONENT, 250, pipeline.stream(seed, pipeline.STREAM_SYNTHETIC), NoiseModel(0.01))


@pytest.fixture(scope="module")
def ablation():
    t0 = time.perf_counter()
    rep = pipeline.run_ablation(RunConfig(**ABLATION), ABLATION_SEEDS, ("info", "random"), True, ablation_data)
    return rep, time.perf_counter() - t0


def paired_margin(records, a, b):
    """Mean of rmse[b] - rmse[a] over seeds and its standard error."""
    by = {(r["seed"], r["method"]): r["rmse"] for r in records}
    d = np.array([by[s, b] - by[s, a] for s in ABLATION_SEEDS])
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.size))


def test_criterion_07_ablation_direction(ablation):
    rep, seconds = ablation
    s = rep["summary"]
    assert all(r["test_points"] == 50 for r in rep["records"] if "test_points" in r)
    lines, ok = [], True
    for other in ("random", "mle-sm"):
        diff, se = paired_margin(rep["records"], "info", other)
        ok &= diff >= se
        lines.append(f"I vs {other}: margin {diff:+.4f} (paired SE {se:.4f})")
    means = ", ".join(f"{k} {v['rmse_mean']:.4f}+-{v['rmse_se']:.4f}" for k, v in s.items())
    ok &= seconds < 1800
    assert report(7, ok, f"mean RMSE {means}; " + "; ".join(lines), seconds)


def test_criterion_08_predictive_mass(ablation):
    rep, _ = ablation
    t0 = time.perf_counter()
    mixtures = [r for r in rep["records"] if "mixture_mass_error" in r]
    worst = max(r["mixture_mass_error"] for r in mixtures)
    points = sum(r["test_points"] for r in mixtures)
    assert report(8, worst <= 1e-3, f"{points} test points over {len(mixtures)} runs: max |mass - 1| = {worst:.1e}",
                  time.perf_counter() - t0)


# ---------------------------------------------------------------- 9: determinism
def test_criterion_09_determinism():
    t0 = time.perf_counter()
    data = sample_dataset(TWO_COMPONENT, 80, np.random.default_rng([9, 0]), NoiseModel(0.01))
    cfg = dict(seed=9, initial=10, batch=5, max_evals=25, mc_samples=100, restarts=2, maxiter=10, workers=1)
    a = pipeline.run(RunConfig(**cfg), data=data).manifest
    b = pipeline.run(RunConfig(**cfg), data=data).manifest
    same_metrics = a["metrics"] == b["metrics"]
    same_all = json.dumps({k: v for k, v in a.items() if k != "timing_seconds"}) == json.dumps(
        {k: v for k, v in b.items() if k != "timing_seconds"})
    assert report(9, same_metrics and same_all, f"metrics {a['metrics']} bitwise equal: {same_metrics}; "
                                                f"whole manifest (minus timings) equal: {same_all}",
                  time.perf_counter() - t0)


# ---------------------------------------------------------------- 10: complexity
def test_criterion_10_quadrature_scaling():
    t0 = time.perf_counter()
    prior = HyperPrior(3, 1.0, [3.0], [0.0])
    rng = np.random.default_rng([10, 0])
    hyper = hk.HyperKernelParams(1.0, 1.5)
    samples = sample_prior_qmc(prior, 500, rng)
    hs, times = [50, 100, 200, 400], []
    for h in hs:
        thetas = sample_prior(prior, rng, h)
        ll = rng.normal(0, 3, size=h)
        best = np.inf
        for _ in range(3):
            tic = time.perf_counter()
            state = qd.make_surrogate(thetas, ll, hyper)
            cache = qd.build_mc_cache(state, prior, 500, rng, samples=samples)
            qd.evidence_moments(state, cache, qd.quadrature_weights(state, cache))
            best = min(best, time.perf_counter() - tic)
        times.append(best)
    slope = float(np.polyfit(np.log(hs), np.log(times), 1)[0])
    assert report(10, slope <= 3.3, f"h = {hs}, m = 500: seconds {', '.join(f'{t:.3f}' for t in times)}; "
                                    f"log-log slope {slope:.2f} (<= 3.3)", time.perf_counter() - t0)
