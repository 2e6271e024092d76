"""End-to-end runs: learning under a budget, prediction, reports.

Randomness
----------
Every generator is ``numpy.random.default_rng([seed, stream, *index])``
with the stream ids below, so each stage owns an independent stream and
results do not depend on how many draws another stage happened to make.
"""

import contextlib
import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import integrate

from specquad import acquisition, baseline, gp, hyperkernel, inference, quadrature
from specquad.data import Dataset, load_csv, normalize, split_indices, summarize
from specquad.spectral import HyperPrior, NoiseModel, sample_prior

log = logging.getLogger(__name__)

STREAM_SPLIT = 0
STREAM_INITIAL = 1
STREAM_HYPER = 2
STREAM_MC = 3
STREAM_ACQUISITION = 4
STREAM_BASELINE = 5
STREAM_SENSITIVITY = 6
STREAM_SYNTHETIC = 99  # per-seed synthetic datasets in ablations


def stream(seed, sid, *index):
    return np.random.default_rng([int(seed), sid, *map(int, index)])


class PipelineError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:  # annotate and re-raise every module error
        raise PipelineError(name, exc) from exc


@dataclass
class RunConfig:
    dataset: str = None
    target_column: object = -1
    test_fraction: float = 0.1
    seed: int = 0
    n_max: int = 5
    alpha: float = 1.0
    initial: int = 20
    batch: int = 20
    hyper_period: int = 5
    max_evals: int = None
    max_seconds: float = None
    mc_samples: int = 1000
    noise_variance: float = 0.01
    mode: str = "info"
    restarts: int = 8
    pool: int = None
    maxiter: int = 50
    q: int = 1
    symmetrize: bool = False
    eps_factor: float = quadrature.EPS_FACTOR
    hyper_restarts: int = 3
    workers: int = 1
    baseline_sm: bool = False
    baseline_components: int = None
    baseline_restarts: int = 5

    def validate(self):
        counts = ["n_max", "initial", "batch", "hyper_period", "mc_samples", "restarts", "maxiter", "workers",
                  "baseline_restarts"]
        for name in counts:
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("pool", "baseline_components"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if (self.max_evals is None) == (self.max_seconds is None):
            raise ValueError("set exactly one budget: max_evals or max_seconds")
        if self.max_evals is not None and (int(self.max_evals) != self.max_evals or self.max_evals < self.initial):
            raise ValueError(f"max_evals must be an integer >= initial ({self.initial})")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise ValueError("max_seconds must be positive")
        if self.mode not in acquisition.MODES:
            raise ValueError(f"mode must be one of {acquisition.MODES}")
        if self.q not in (1, 2):
            raise ValueError("q must be 1 or 2")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not self.noise_variance > 0 or not self.alpha > 0:
            raise ValueError("noise_variance and alpha must be positive")
        if not 0.0 <= self.eps_factor < 1.0:
            raise ValueError("eps_factor must lie in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Prepared:
    train: Dataset
    test: Dataset
    test_index: np.ndarray
    record: object
    summary: object
    prior: HyperPrior
    noise: NoiseModel


def prepare(config, data=None):
    """Split the raw data, then normalise both parts with training statistics."""
    with stage("data"):
        raw = data if data is not None else load_csv(config.dataset, config.target_column)
        tr, te = split_indices(raw.count, config.test_fraction, [config.seed, STREAM_SPLIT])
        train, rec = normalize(raw.subset(tr))
        test = rec.transform(raw.subset(te))
        summary = summarize(train)
        prior = HyperPrior.from_summary(summary, config.n_max, config.alpha)
    return Prepared(train, test, te, rec, summary, prior, NoiseModel(config.noise_variance))


def evaluate_likelihoods(thetas, train, noise, workers=1):
    """Log marginal likelihoods, committed in candidate order."""
    def one(t):
        return gp.log_marginal_likelihood(t, train, noise)

    if workers > 1 and len(thetas) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return np.array(list(ex.map(one, thetas)))
    return np.array([one(t) for t in thetas])


@dataclass
class RunResult:
    manifest: dict
    state: object
    artifacts: object
    mixture: object
    metrics: object
    prepared: Prepared
    trace: list = field(default_factory=list)


def _surrogate(thetas, lls, hyper, config, rng, reoptimize, bank=None):
    bank = bank or hyperkernel.MixtureBank.from_params(thetas, config.symmetrize)
    dist = hyperkernel.mmd_matrix(bank, bank)
    if reoptimize or hyper is None:
        z = quadrature.warp(lls, config.eps_factor)[3]
        hyper = hyperkernel.optimize_hypers(dist, z, rng, q=config.q, symmetrize=config.symmetrize,
                                            restarts=config.hyper_restarts, start=hyper)
    return quadrature.make_surrogate(thetas, lls, hyper, config.eps_factor, bank=bank, dist=dist)


def run(config, out_dir=None, data=None):
    """Learn the kernel posterior under the configured budget and predict.

    ``data`` may supply a raw :class:`Dataset` instead of ``config.dataset``.
    Output files are written when ``out_dir`` is given.
    """
    config.validate()
    t_start = time.perf_counter()
    deadline = None if config.max_seconds is None else t_start + config.max_seconds
    timing = {"likelihood": 0.0, "surrogate": 0.0, "acquisition": 0.0, "prediction": 0.0}
    prep = prepare(config, data)

    tic = time.perf_counter()
    with stage("likelihood"):
        thetas = sample_prior(prep.prior, stream(config.seed, STREAM_INITIAL), config.initial)
        lls = list(evaluate_likelihoods(thetas, prep.train, prep.noise, config.workers))
    timing["likelihood"] += time.perf_counter() - tic

    trace, hyper, rnd = [], None, 0
    while True:
        if config.max_evals is not None and len(thetas) + config.batch > config.max_evals:
            break
        if deadline is not None and time.perf_counter() >= deadline:
            break
        tic = time.perf_counter()
        with stage("surrogate"):
            state = _surrogate(thetas, lls, hyper, config, stream(config.seed, STREAM_HYPER, rnd),
                               reoptimize=rnd % config.hyper_period == 0)
            hyper = state.hyper
            need_double = config.mode == "info"
            cache = quadrature.build_mc_cache(state, prep.prior, config.mc_samples,
                                              stream(config.seed, STREAM_MC, rnd), double=need_double)
            art = quadrature.quadrature_weights(state, cache)
            ev = quadrature.evidence_moments(state, cache, art)
        timing["surrogate"] += time.perf_counter() - tic

        tic = time.perf_counter()
        with stage("acquisition"):
            rng = stream(config.seed, STREAM_ACQUISITION, rnd)
            if config.mode == "random":
                batch, details = sample_prior(prep.prior, rng, config.batch), []
            else:
                ctx = acquisition.AcquisitionContext(state, cache, art, config.batch) if need_double else None
                if ctx is None:
                    ctx = _uncertainty_context(state, cache, art, config.batch)
                batch, details = acquisition.optimize_acquisition(
                    ctx, prep.prior, config.restarts, rng, config.mode, config.pool, config.maxiter,
                    return_details=True)
        timing["acquisition"] += time.perf_counter() - tic

        tic = time.perf_counter()
        with stage("likelihood"):
            new = evaluate_likelihoods(batch, prep.train, prep.noise, config.workers)
        timing["likelihood"] += time.perf_counter() - tic
        trace.append(_trace_entry(rnd, state, ev, batch, details))
        thetas = thetas + list(batch)
        lls = lls + list(new)
        rnd += 1

    tic = time.perf_counter()
    with stage("surrogate"):
        state = _surrogate(thetas, lls, hyper, config, stream(config.seed, STREAM_HYPER, rnd),
                           reoptimize=hyper is None or rnd % config.hyper_period == 0)
        cache = quadrature.build_mc_cache(state, prep.prior, config.mc_samples, stream(config.seed, STREAM_MC, rnd))
        art = quadrature.quadrature_weights(state, cache)
        ev = quadrature.evidence_moments(state, cache, art)
        trace.append(_trace_entry("final", state, ev, [], []))
    timing["surrogate"] += time.perf_counter() - tic

    tic = time.perf_counter()
    with stage("inference"):
        pm = inference.predictive_posterior_marginalized(state, art, prep.train, prep.test.inputs, prep.noise)
        met = inference.metrics(pm, prep.test.targets)
    timing["prediction"] += time.perf_counter() - tic

    manifest = {
        "config": config.to_dict(),
        "normalization": prep.record.to_dict(),
        "summary": prep.summary.to_dict(),
        "prior": prep.prior.to_dict(),
        "hyper": state.hyper.to_dict(),
        "evaluations": {"initial": config.initial, "rounds": rnd, "batch": config.batch, "total": len(thetas)},
        "evidence": ev.to_dict() | {"log_evidence_sd": ev.log_sd},
        "evidence_trace": [{k: t[k] for k in ("round", "h", "log_evidence_mean", "evidence_variance")}
                           for t in trace],
        "metrics": met.to_dict(),
        "metrics_denormalized": met.denormalized(prep.record.target_scale, prep.test.count).to_dict(),
    }
    if config.baseline_sm:
        tic = time.perf_counter()
        manifest["baseline_sm"] = run_mle_sm_baseline(config, prep=prep).to_dict()
        timing["baseline"] = time.perf_counter() - tic
    timing["total"] = time.perf_counter() - t_start
    manifest["timing_seconds"] = timing

    result = RunResult(manifest, state, art, pm, met, prep, trace)
    if out_dir is not None:
        with stage("output"):
            write_outputs(result, out_dir)
    return result


def _uncertainty_context(state, cache, art, batch):
    """Uncertainty sampling needs no evidence variance, so the double
    integral is never built; a zero stand-in satisfies the context."""
    stub = quadrature.McIntegralCache(cache.samples, cache.bank, cache.kernel_cross, cache.single_integral,
                                      np.zeros_like(cache.single_integral))
    return acquisition.AcquisitionContext(state, stub, art, batch)


def _trace_entry(rnd, state, ev, batch, details):
    return {
        "round": rnd,
        "h": state.h,
        "log_evidence_mean": ev.log_mean,
        "evidence_variance": ev.variance,
        "shared_log_shift": ev.shared_log_shift,
        "hyper": state.hyper.to_dict(),
        "chosen_n_values": [int(t.n) for t in batch],
        "alpha": [float(d.value) for d in details],
    }


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default))


def write_outputs(result, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(result.manifest, out / "manifest.json")

    pm, prep = result.mixture, result.prepared
    mm = inference.moment_matched(pm)
    dens = pm.density(prep.test.targets)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["test_index", "mixture_mean", "mixture_variance", "density_at_target"])
        for i, mu, v, d in zip(prep.test_index, mm.mean, mm.variance, dens):
            w.writerow([int(i), repr(float(mu)), repr(float(v)), repr(float(d))])

    with open(out / "trace.jsonl", "w") as fh:
        for entry in result.trace:
            fh.write(json.dumps(entry, default=_json_default) + "\n")

    samples = [{"theta": t.to_dict(), "log_likelihood": float(ll)}
               for t, ll in zip(result.state.thetas, result.state.log_likelihoods)]
    write_json(samples, out / "samples.json")


def run_mle_sm_baseline(config, data=None, prep=None):
    """Single SM kernel fitted by gradient ascent; GP metrics on the test split."""
    config.validate()
    prep = prep or prepare(config, data)
    n = config.baseline_components or config.n_max
    with stage("baseline"):
        fit = baseline.fit_sm(prep.train, n, prep.prior, stream(config.seed, STREAM_BASELINE),
                              restarts=config.baseline_restarts, init_noise=config.noise_variance)
        post = baseline.predict_sm(fit, prep.train, prep.test.inputs)
        return inference.gaussian_metrics(post.mean, post.variance, prep.test.targets)


def run_mc_sensitivity(config, m_grid, h_grid, repeats, data=None):
    """Evidence estimates across Monte Carlo sample sizes.

    For each h the first h of one shared set of prior draws are evaluated
    once; every (m, repeat) cell reuses those likelihoods and the fitted
    hyper-kernel and only redraws the Monte Carlo samples. Returns one row
    per (h, m) with the mean and standard error over repeats, on a common
    scale (evidence relative to the best likelihood in the h draws).
    """
    config.validate()
    if repeats < 2:
        raise ValueError("need at least 2 repeats for a standard error")
    prep = prepare(config, data)
    h_grid = sorted(int(h) for h in h_grid)
    with stage("likelihood"):
        thetas = sample_prior(prep.prior, stream(config.seed, STREAM_SENSITIVITY), h_grid[-1])
        lls = evaluate_likelihoods(thetas, prep.train, prep.noise, config.workers)
    rows = []
    for h in h_grid:
        with stage("surrogate"):
            state = _surrogate(thetas[:h], lls[:h], None, config, stream(config.seed, STREAM_HYPER, h), True)
        for m in m_grid:
            values = []
            with stage("quadrature"):
                for r in range(repeats):
                    cache = quadrature.build_mc_cache(state, prep.prior, int(m),
                                                      stream(config.seed, STREAM_MC, h, m, r), double=False)
                    art = quadrature.quadrature_weights(state, cache)
                    values.append(quadrature.evidence_moments(state, cache, art).mean)
            values = np.array(values)
            mean = float(values.mean())
            rows.append({
                "h": h,
                "m": int(m),
                "mean": mean,
                "sem": float(values.std(ddof=1) / np.sqrt(repeats)),
                "log_evidence_mean": float(np.log(mean) + state.shared_log_shift),
                "shared_log_shift": state.shared_log_shift,
                "values": values.tolist(),
            })
    return rows


def run_ablation(config, seeds, modes=("info", "uncertainty", "random"), baseline_sm=True, data_factory=None,
                 out_dir=None):
    """Run each acquisition mode (and optionally the SM baseline) over seeds.

    ``data_factory(seed)`` may produce a raw dataset per seed; otherwise
    ``config.dataset`` is used for every seed. Returns per-run records and
    per-method means with standard errors.
    """
    records = []
    for seed in seeds:
        data = data_factory(seed) if data_factory is not None else None
        for mode in modes:
            cfg = RunConfig(**(config.to_dict() | {"seed": int(seed), "mode": mode, "baseline_sm": False}))
            sub = None if out_dir is None else Path(out_dir) / f"seed{seed}_{mode}"
            res = run(cfg, sub, data)
            mass = mixture_mass(res.mixture)
            records.append({"seed": int(seed), "method": mode, **res.metrics.to_dict(),
                            "mixture_mass_error": float(np.max(np.abs(mass - 1.0))),
                            "test_points": int(mass.size)})
        if baseline_sm:
            cfg = RunConfig(**(config.to_dict() | {"seed": int(seed), "baseline_sm": False}))
            met = run_mle_sm_baseline(cfg, data)
            records.append({"seed": int(seed), "method": "mle-sm", **met.to_dict()})
    summary = {}
    for method in dict.fromkeys(r["method"] for r in records):
        rmse = np.array([r["rmse"] for r in records if r["method"] == method])
        ll = np.array([r["test_log_likelihood"] for r in records if r["method"] == method])
        se = (lambda a: float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else float("nan"))
        summary[method] = {"runs": int(rmse.size), "rmse_mean": float(rmse.mean()), "rmse_se": se(rmse),
                           "ll_mean": float(ll.mean()), "ll_se": se(ll)}
    report = {"records": records, "summary": summary}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(report, Path(out_dir) / "ablation.json")
    return report


def mixture_mass(pm, half_width=10.0, points=4001):
    """Trapezoid integral of each test point's mixture density over
    +-half_width moment-matched standard deviations (plus component spread)."""
    mm = inference.moment_matched(pm)
    spread = np.sqrt(np.max(pm.variances, axis=1))
    sd = np.maximum(np.sqrt(mm.variance), spread)
    lo = np.minimum(mm.mean - half_width * sd, np.min(pm.means, axis=1) - half_width * spread)
    hi = np.maximum(mm.mean + half_width * sd, np.max(pm.means, axis=1) + half_width * spread)
    grid = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, points)[None, :]
    return integrate.trapezoid(pm.density(grid), grid, axis=1)
