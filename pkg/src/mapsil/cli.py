"""Command-line entry point.

Commands: gen-data, train, eval, usage, ablate, compare. Failures exit non-zero
with a single ``error[<category>]: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import fileio
from .envs import SUITES, generate_demos, get_suite
from .errors import MapsError
from .evaluation import ABLATION_TERMS, METHODS, AblationResult, ablate, compare, module_usage, success_rate
from .trainer import TrainConfig, split, train_maps, train_mt_bc, train_mtmh_bc, train_single_bc

EXIT_CODES = {"config": 2, "format": 3, "divergence": 4, "expert": 5, "error": 1}

SUCCESS_COLUMNS = ("method", "suite", "task", "task_name", "n_starts", "seed", "success_rate")
ABLATION_COLUMNS = (
    "variant",
    "lambda_share",
    "lambda_explore",
    "lambda_sparse",
    "lambda_smooth",
    "task",
    "task_name",
    "success_rate",
    "effective_modules",
    "aggregate_effective_modules",
)
COMPARISON_COLUMNS = ("method", "suite", "task", "n_experts", "mean_success", "std_success", "n_seeds")
TALLY_COLUMNS = ("method", "better", "worse", "ties", "cells", "better_frac", "worse_frac")


def _with_suffix(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.name + suffix)


def cmd_gen_data(args):
    suite = get_suite(args.suite)
    data = generate_demos(suite, args.n, args.seed)
    fileio.save_demos(data, args.out)
    print(f"wrote {len(data.trajectories)} trajectories ({data.n_transitions} steps) to {args.out}")


def cmd_train(args):
    config = fileio.load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    data = fileio.load_demos(args.data)
    train, val = split(data, config.train_fraction, config.seed)
    out = Path(args.out)
    if args.method == "single":
        for k in range(data.n_tasks):
            res = train_single_bc(config, train, k, val)
            path = _with_suffix(out, f".task{k}")
            fileio.save_checkpoint(res.model, config, path, {"task": k, "n_tasks": data.n_tasks})
            fileio.write_history(_with_suffix(path, ".history.csv"), res.history, config)
            print(f"task {k}: best epoch {res.best_epoch}, checkpoint {path}")
        return
    trainer = {"maps": train_maps, "mt": train_mt_bc, "mtmh": train_mtmh_bc}[args.method]
    res = trainer(config, train, val)
    fileio.save_checkpoint(res.model, config, out)
    fileio.write_history(_with_suffix(out, ".history.csv"), res.history, config)
    print(f"best epoch {res.best_epoch}, checkpoint {out}")


def cmd_eval(args):
    policy, _ = fileio.load_policy(args.checkpoint)
    suite = get_suite(args.suite)
    if policy.n_tasks != len(suite):
        raise MapsError(f"model has {policy.n_tasks} tasks but suite {args.suite!r} has {len(suite)}")
    rates = success_rate(policy, suite, args.starts, args.seed)
    rows = [
        {
            "method": policy.kind,
            "suite": args.suite,
            "task": spec.index,
            "task_name": spec.name,
            "n_starts": args.starts,
            "seed": args.seed,
            "success_rate": float(r),
        }
        for spec, r in zip(suite, rates)
    ]
    fileio.write_csv(args.out, SUCCESS_COLUMNS, rows)
    for row in rows:
        print(f"{row['task_name']}: {row['success_rate']:.2f}")


def cmd_usage(args):
    policy, _ = fileio.load_policy(args.checkpoint)
    if policy.kind != "maps":
        raise MapsError("module usage needs a modular (maps) checkpoint")
    data = fileio.load_demos(args.data)
    names = [s.name for s in get_suite(args.suite)] if args.suite else None
    report = module_usage(policy, data, names)
    fileio.write_csv(args.out, fileio.USAGE_COLUMNS, fileio.usage_rows(report))
    svg = Path(args.out).with_suffix(".svg")
    Path(svg).write_text(fileio.usage_svg(report))
    print(f"aggregate effective modules {report.aggregate_effective_count:.2f}; chart {svg}")


def _ablation_rows(variant, cfg, result, suite):
    eff = result.usage.effective_counts
    rows = []
    for spec in suite:
        rows.append(
            {
                "variant": variant,
                "lambda_share": cfg.lambda_share,
                "lambda_explore": cfg.lambda_explore,
                "lambda_sparse": cfg.lambda_sparse,
                "lambda_smooth": cfg.lambda_smooth,
                "task": spec.index,
                "task_name": spec.name,
                "success_rate": float(result.success[spec.index]),
                "effective_modules": float(eff[spec.index]),
                "aggregate_effective_modules": result.usage.aggregate_effective_count,
            }
        )
    return rows


def cmd_ablate(args):
    config = fileio.load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    data = fileio.load_demos(args.data)
    suite = get_suite(args.suite)
    rows = []
    if not args.skip_full:
        res = train_maps(config, data)
        usage = module_usage(res.model, data, [s.name for s in suite])
        rates = success_rate(res.model, suite, args.starts, config.seed)
        full = AblationResult("none", config, res.model, usage, rates, res.history)
        rows += _ablation_rows("full", config, full, suite)
    result = ablate(config, data, args.term, suite, args.starts, config.seed)
    rows += _ablation_rows(f"no_{args.term}", result.config, result, suite)
    fileio.write_csv(args.out, ABLATION_COLUMNS, rows)
    print(f"no_{args.term}: aggregate effective modules {result.usage.aggregate_effective_count:.2f}")


def cmd_compare(args):
    suites = args.suite or ["subbehavior"]
    if args.config and len(args.config) not in (1, len(suites)):
        raise MapsError("give one --config, or one per --suite in the same order")
    if args.config:
        configs = [fileio.load_config(p) for p in args.config]
        configs = dict(zip(suites, configs * len(suites) if len(configs) == 1 else configs))
    else:
        configs = TrainConfig()
    table = compare(configs, suites, args.experts, args.seeds, methods=args.methods, n_starts=args.starts)
    fileio.write_csv(args.out, COMPARISON_COLUMNS, table.summary())
    tally = table.tally("single") if "single" in args.methods else []
    fileio.write_csv(_with_suffix(args.out, ".tally.csv"), TALLY_COLUMNS, tally)
    for row in tally:
        print(f"{row['method']}: better {row['better_frac']:.2f} worse {row['worse_frac']:.2f} than single BC")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mapsil", description="Train and evaluate modular multi-task imitation policies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate expert demonstrations")
    g.add_argument("--suite", choices=SUITES, required=True)
    g.add_argument("--n", type=int, default=20, help="demonstrations per task")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a demo file")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--method", choices=METHODS, default="maps")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="success rates over sampled starts")
    e.add_argument("--checkpoint", action="append", required=True)
    e.add_argument("--suite", choices=SUITES, required=True)
    e.add_argument("--starts", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    u = sub.add_parser("usage", help="module usage CSV and bar chart")
    u.add_argument("--checkpoint", action="append", required=True)
    u.add_argument("--data", required=True)
    u.add_argument("--suite", choices=SUITES, default=None, help="label tasks with this suite's names")
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_usage)

    a = sub.add_parser("ablate", help="retrain with one selector term removed")
    a.add_argument("--config", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--term", choices=ABLATION_TERMS, required=True)
    a.add_argument("--suite", choices=SUITES, required=True)
    a.add_argument("--starts", type=int, default=100)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--skip-full", action="store_true", help="do not train the unablated reference")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("compare", help="MAPS against the BC baselines")
    c.add_argument("--config", action="append", default=None)
    c.add_argument("--suite", action="append", choices=SUITES, default=None)
    c.add_argument("--experts", type=int, nargs="+", default=[20])
    c.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    c.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    c.add_argument("--starts", type=int, default=100)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except MapsError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)
    except (OSError, ValueError) as e:
        category = "io" if isinstance(e, OSError) else "value"
        print(f"error[{category}]: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
