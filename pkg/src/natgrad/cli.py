"""Command-line surface: train / verify / bench / theorem1.

Exit codes: 0 success, 1 usage error (bad flags, missing files),
2 verification failure, 3 runtime divergence.
"""

import argparse
import os
import statistics
import sys
from dataclasses import fields

from . import verify as verify_mod
from .datasets import SYNTHETIC_KINDS
from .errors import NatgradError
from .model import save_network
from .oracle import run_theorem1_experiment
from .train import (
    RunConfig,
    build_run_config,
    load_run_config,
    save_run_config,
    train,
    write_metrics,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_DIVERGED = 3

# Flags mirror config keys one to one; strings stay strings, numbers are
# parsed by the config builder.
_OVERRIDE_KEYS = [f.name for f in fields(RunConfig)]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_override_flags(parser):
    for key in _OVERRIDE_KEYS:
        parser.add_argument(f"--{key}", default=None)


def _build_parser():
    parser = _Parser(prog="natgrad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one configured training run")
    p_train.add_argument("--config", default=None, help="flat key = value file")
    p_train.add_argument("--out", default=None, help="directory for run artifacts")
    _add_override_flags(p_train)

    p_verify = sub.add_parser("verify", help="run the oracle equivalence suite")

    p_bench = sub.add_parser("bench", help="optimizer comparison grid")
    p_bench.add_argument("--dataset", default="two-moons")
    p_bench.add_argument("--seeds", type=int, default=3)
    p_bench.add_argument("--epochs", type=int, default=3)
    p_bench.add_argument("--samples", type=int, default=400)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument(
        "--optimizers",
        default="sgd,adaptive-baseline,ngd,ring,reng,rkalman",
        help="comma-separated subset",
    )

    p_th = sub.add_parser("theorem1", help="full-batch convergence experiment")
    p_th.add_argument("--width", type=int, default=256)
    p_th.add_argument("--samples", type=int, default=20)
    p_th.add_argument("--iters", type=int, default=50)
    p_th.add_argument("--rho", type=float, default=1e-4)
    p_th.add_argument("--seed", type=int, default=0)
    p_th.add_argument("--factored", action="store_true",
                      help="also run the Kronecker-factored optimizer for comparison")
    p_th.add_argument("--out", default=None)
    return parser, p_verify


def _resolve_train_config(args):
    overrides = {key: getattr(args, key) for key in _OVERRIDE_KEYS}
    if args.config is not None:
        if not os.path.exists(args.config):
            raise UsageError(f"file not found: {args.config}")
        return load_run_config(args.config, overrides)
    return build_run_config({}, overrides)


def _cmd_train(args):
    try:
        config = _resolve_train_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if config.dataset not in SYNTHETIC_KINDS and not os.path.exists(config.dataset):
        raise UsageError(f"file not found: {config.dataset}")
    result = train(config)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        save_run_config(config, os.path.join(args.out, "config.txt"))
        write_metrics(result.records, os.path.join(args.out, "metrics.txt"))
        save_network(result.net, os.path.join(args.out, "model.txt"))
    print(f"{config.run_id}: {result.summary}")
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def _cmd_verify(_args):
    results = verify_mod.run_all()
    width = max(len(r.name) for r in results)
    for r in results:
        mark = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {mark}  [{r.seconds:6.2f}s]  {r.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed")
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# Per-optimizer defaults for the bench grid, tuned for desk-scale tasks:
# random inits move far per step here, so the second-order variants get
# much heavier damping than their fine-tuning-scale defaults.
_BENCH_DEFAULTS = {
    "sgd": {"learning_rate": 0.5},
    "adaptive-baseline": {"learning_rate": 0.05},
    "ngd": {"learning_rate": 0.5, "rho": 0.1},
    "ring": {"learning_rate": 0.5, "rho": 0.1},
    "reng": {"learning_rate": 0.5, "rho": 0.1},
    "rkalman": {"rho": 1e-4},
}


def _cmd_bench(args):
    from . import backend

    backend.warmup()  # jit/cache loading must not bill the first cell
    names = [n.strip() for n in args.optimizers.split(",") if n.strip()]
    rows = []
    all_records = []
    for name in names:
        if name not in _BENCH_DEFAULTS:
            raise UsageError(f"unknown optimizer {name!r}")
        metrics = []
        times = []
        for seed in range(args.seeds):
            values = {
                "optimizer": name,
                "dataset": args.dataset,
                "epochs": str(args.epochs),
                "samples": str(args.samples),
                "seed": str(seed),
            }
            values.update({k: str(v) for k, v in _BENCH_DEFAULTS[name].items()})
            config = build_run_config(values)
            result = train(config)
            metrics.append(result.final_metric)
            times.append(result.total_ms)
            all_records.extend(result.records)
            if args.out:
                cfg_dir = os.path.join(args.out, "configs")
                os.makedirs(cfg_dir, exist_ok=True)
                save_run_config(config, os.path.join(cfg_dir, f"{config.run_id}.cfg"))
        mean = statistics.fmean(metrics)
        std = statistics.stdev(metrics) if len(metrics) > 1 else 0.0
        rows.append((name, mean, std, statistics.fmean(times)))
    header = f"{'optimizer':<18} {'metric':>16} {'mean_ms':>10}"
    lines = [header]
    for name, mean, std, ms in rows:
        lines.append(f"{name:<18} {mean:>8.4f} +/- {std:<5.4f} {ms:>10.1f}")
    table = "\n".join(lines)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
        write_metrics(all_records, os.path.join(args.out, "metrics.txt"))
    return EXIT_OK


def _cmd_theorem1(args):
    result = run_theorem1_experiment(
        width=args.width, samples=args.samples, iters=args.iters,
        rho=args.rho, seed=args.seed, include_factored=args.factored,
    )
    lines = [
        f"config width:{args.width} samples:{args.samples} iters:{args.iters} "
        f"rho:{args.rho!r} seed:{args.seed}"
    ]
    for rec in result.records:
        lines.append(
            f"iter:{rec.iteration} residual:{rec.residual!r} "
            f"ratio:{rec.contraction_ratio!r} kappa:{rec.gram_condition!r} "
            f"drift:{rec.jacobian_drift!r} c:{rec.c_estimate!r} "
            f"bound:{rec.bound_factor!r}"
        )
    if result.factored_residuals is not None:
        for i, res in enumerate(result.factored_residuals):
            lines.append(f"iter:{i} factored_residual:{res!r}")
    body = "\n".join(lines)
    print(body)
    print(
        f"final residual {result.final_residual:.3e} after "
        f"{len(result.records)} iterations; min Gram eigenvalue "
        f"{result.gram_min_eig:.3e}"
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "theorem1.txt"), "w", encoding="utf-8") as fh:
            fh.write(body + "\n")
    return EXIT_OK


def main(argv=None):
    parser, _ = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "bench":
            return _cmd_bench(args)
        return _cmd_theorem1(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except NatgradError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
