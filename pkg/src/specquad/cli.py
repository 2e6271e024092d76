"""Command-line entry point.

Run options can come from a JSON file (``--config``); flags given on the
command line override it, and the file overrides built-in defaults.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from specquad import pipeline, synthetic
from specquad.pipeline import PipelineError, RunConfig
from specquad.spectral import NoiseModel


def _target(text):
    try:
        return int(text)
    except ValueError:
        return text


def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="JSON file with run options")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if f.name == "target_column":
            p.add_argument(flag, type=_target, default=argparse.SUPPRESS, help="target column name or index")
        elif isinstance(default, bool):
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            kind = {"max_seconds": float, "dataset": str}.get(f.name, type(default) if default is not None else int)
            p.add_argument(flag, type=kind, default=argparse.SUPPRESS, help=f"default: {default}")


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def build_parser():
    parser = argparse.ArgumentParser(prog="specquad",
                                     description="GP regression marginalised over spectral-mixture kernels")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="learn and predict on one dataset")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("baseline-sm", help="single SM kernel fitted by maximum likelihood")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, help="write metrics JSON here")

    p = sub.add_parser("mc-sensitivity", help="evidence estimates across Monte Carlo sample sizes")
    _add_config_flags(p)
    p.add_argument("--m-grid", type=_int_list, default=[100, 1000, 10000])
    p.add_argument("--h-grid", type=_int_list, default=[100, 500, 1000])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", type=Path, help="write the table as JSON here")

    p = sub.add_parser("ablation", help="compare acquisition modes and the SM baseline over seeds")
    _add_config_flags(p)
    p.add_argument("--seeds", type=_int_list, default=list(range(10)))
    p.add_argument("--modes", type=lambda s: s.split(","), default=["info", "uncertainty", "random"])
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--synthetic-count", type=int, default=None,
                   help="draw this many points per seed from the two-component reference kernel "
                        "instead of reading --dataset")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("synth", help="write a dataset drawn from the two-component reference kernel")
    p.add_argument("--count", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-variance", type=float, default=0.01)
    p.add_argument("--out", type=Path, required=True)
    return parser


def config_from_args(args):
    base = {}
    if getattr(args, "config", None) is not None:
        base = json.loads(args.config.read_text())
    names = {f.name for f in fields(RunConfig)}
    base.update({k: v for k, v in vars(args).items() if k in names})
    return RunConfig.from_dict(base).validate()


def _synthetic_factory(count, noise_variance):
    def make(seed):
        rng = pipeline.stream(seed, pipeline.STREAM_SYNTHETIC)
        return synthetic.sample_dataset(synthetic.TWO_COMPONENT, count, rng, NoiseModel(noise_variance))
    return make


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            d = synthetic.sample_dataset(synthetic.TWO_COMPONENT, args.count, np.random.default_rng(args.seed),
                                         NoiseModel(args.noise_variance))
            synthetic.write_csv(d, args.out)
            return 0
        try:
            config = config_from_args(args)
        except (ValueError, TypeError, OSError) as exc:
            raise PipelineError("config", exc) from exc
        if args.command != "ablation" or args.synthetic_count is None:
            if config.dataset is None:
                raise PipelineError("config", ValueError("--dataset is required"))
        if args.command == "run":
            res = pipeline.run(config, args.out)
            print(json.dumps(res.manifest["metrics"]))
        elif args.command == "baseline-sm":
            met = pipeline.run_mle_sm_baseline(config)
            print(json.dumps(met.to_dict()))
            if args.out:
                pipeline.write_json(met.to_dict(), args.out)
        elif args.command == "mc-sensitivity":
            rows = pipeline.run_mc_sensitivity(config, args.m_grid, args.h_grid, args.repeats)
            for r in rows:
                print(f"h={r['h']:>6} m={r['m']:>6} evidence={r['mean']:.6g} +- {r['sem']:.3g}")
            if args.out:
                pipeline.write_json(rows, args.out)
        elif args.command == "ablation":
            factory = None
            if args.synthetic_count is not None:
                factory = _synthetic_factory(args.synthetic_count, config.noise_variance)
            report = pipeline.run_ablation(config, args.seeds, tuple(args.modes), not args.no_baseline,
                                           factory, args.out)
            for method, s in report["summary"].items():
                print(f"{method:>12}: rmse {s['rmse_mean']:.4f} +- {s['rmse_se']:.4f}  "
                      f"ll {s['ll_mean']:.2f} +- {s['ll_se']:.2f}  ({s['runs']} runs)")
    except PipelineError as exc:
        print(f"specquad: error {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
