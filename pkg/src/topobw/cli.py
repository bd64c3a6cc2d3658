"""Command-line entry point ``topobw``.

Every subcommand exits with status 0 on success. On failure it exits nonzero
and writes a JSON object ``{"error": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import harness
from .datasets import DatasetSpec, mnist_dataset, sample_dataset
from .grid import build_grid_spec, read_points_csv
from .loss import LossConfig, VARIANTS, loss_landscape, write_landscape_csv
from .optimizer import OptimizerConfig, select_bandwidth_tda
from .selectors import select


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message)


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _grid(values):
    return values[0] if len(values) == 1 else tuple(values)


def _fmt_from_path(path, fmt):
    if fmt:
        return fmt
    return "json" if str(path).endswith(".json") else "csv"


def _write_json(obj, path):
    text = json.dumps(obj, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _loss_cfg(args):
    if getattr(args, "variant", None):
        return LossConfig(variant=args.variant)
    return LossConfig(alpha_count=args.alpha_count, alpha_tp=args.alpha_tp)


def _add_loss_args(p):
    p.add_argument("--alpha-count", type=float, default=1.0)
    p.add_argument("--alpha-tp", type=float, default=1.0)
    p.add_argument("--variant", choices=VARIANTS)


def _add_opt_args(p):
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--init", default="silverman", help='"silverman" or a positive bandwidth')
    p.add_argument("--early-stop", action="store_true")


def _opt_cfg(args):
    return OptimizerConfig(init=args.init, learning_rate=args.lr, epochs=args.epochs,
                           early_stop=args.early_stop)


# ---------------------------------------------------------------- subcommands


def cmd_select(args):
    X = read_points_csv(args.input, dim=args.dim)
    if args.method != "tda":
        res = select(args.method, X)
        _write_json({"method": res.method, "h": res.h, "diagnostics": res.diagnostics},
                    args.out)
        return
    spec = build_grid_spec(X, _grid(args.grid), args.padding)
    trace = select_bandwidth_tda(X, spec, _loss_cfg(args), _opt_cfg(args))
    if args.trace:
        trace.to_csv(args.trace)
    summary = trace.summary()
    summary.pop("wall_time_seconds")
    _write_json({"method": "tda", "h": trace.final_h, **summary}, args.out)


def _bench_config(args):
    if args.config:
        with open(args.config) as fh:
            cfg = harness.ExperimentConfig.from_dict(json.load(fh))
    elif args.preset:
        cfg = harness.desk_preset(args.preset)
    elif args.dataset:
        cfg = harness.ExperimentConfig(args.dataset)
    else:
        raise CLIError("one of --config, --preset or --dataset is required")
    changes = {}
    if args.dataset and (args.config or args.preset):
        changes["dataset"] = DatasetSpec(args.dataset)
    for flag, name in (("points", "n_points"), ("trials", "n_trials"), ("seed", "base_seed"),
                       ("jobs", "n_jobs")):
        if getattr(args, flag, None) is not None:
            changes[name] = getattr(args, flag)
    if getattr(args, "grid", None):
        changes["grid"] = _grid(args.grid)
    if getattr(args, "methods", None):
        changes["methods"] = tuple(args.methods)
    if getattr(args, "metrics", None):
        changes["metrics"] = tuple(args.metrics)
    if getattr(args, "timing", False):
        changes["record_timing"] = True
    if changes:
        cfg = harness.ExperimentConfig(**{**_fields(cfg), **changes})
    return cfg


def _fields(cfg):
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


def _add_bench_args(p, with_dataset=True):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--preset", help="desk-scale preset name")
    if with_dataset:
        p.add_argument("--dataset")
    p.add_argument("--points", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=_ints)
    p.add_argument("--methods", type=_names)
    p.add_argument("--metrics", type=_names)
    p.add_argument("--jobs", type=int)
    p.add_argument("--timing", action="store_true", help="record selector wall time")


def cmd_bench(args):
    cfg = _bench_config(args)
    result = harness.run_experiment(replace(cfg, out=None))
    harness.emit_results(result.records, _fmt_from_path(args.out, args.format), args.out)
    if args.summary:
        harness.write_summary_csv(result.summary, args.summary)


def cmd_sweep(args):
    cfg = _bench_config(args)
    sweep = harness.SweepConfig(args.param, args.values, cfg)
    result = harness.run_sensitivity_sweep(sweep)
    harness.write_summary_csv(result.rows(), args.out, leading=("parameter", "value"))
    if args.records:
        records = [r for res in result.results for r in res.records]
        harness.emit_results(records, _fmt_from_path(args.records, None), args.records)


def cmd_ablate(args):
    cfg = _bench_config(args)
    result = harness.run_ablation(cfg, args.variants)
    harness.emit_results(result.records, _fmt_from_path(args.out, args.format), args.out)
    if args.summary:
        harness.write_summary_csv(result.summary, args.summary)


def cmd_landscape(args):
    ds = DatasetSpec(args.dataset)
    X = sample_dataset(ds, args.points, args.seed)
    spec = build_grid_spec(X, _grid(args.grid) if args.grid else (200 if ds.dim == 1 else 64),
                           args.padding)
    if not 0 < args.h_min < args.h_max:
        raise CLIError("need 0 < --h-min < --h-max")
    space = np.geomspace if args.log else np.linspace
    rows = loss_landscape(X, spec, space(args.h_min, args.h_max, args.steps), _loss_cfg(args))
    write_landscape_csv(rows, args.out)


def cmd_mnist(args):
    ds = mnist_dataset(args.images, args.labels, args.digit)
    methods = tuple(args.methods) if args.methods else tuple(
        m for m in harness.METHOD_ORDER if m != "isj")
    cfg = harness.ExperimentConfig(ds, n_points=args.points, n_trials=args.trials,
                                   base_seed=args.seed, methods=methods,
                                   opt_cfg=OptimizerConfig(early_stop=True),
                                   record_timing=args.timing)
    result = harness.run_experiment(cfg)
    harness.emit_results(result.records, _fmt_from_path(args.out, None), args.out)
    if args.summary:
        harness.write_summary_csv(result.summary, args.summary)


def build_parser():
    parser = _Parser(prog="topobw", description="Topology-driven KDE bandwidth selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("select", help="select a bandwidth for a CSV point cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--grid", type=_ints, default=[100])
    p.add_argument("--padding", type=float, default=0.1)
    p.add_argument("--method", default="tda")
    p.add_argument("--trace", help="write the per-epoch trace CSV here")
    p.add_argument("--out", default="-")
    _add_loss_args(p)
    _add_opt_args(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("bench", help="benchmark selectors on a synthetic dataset")
    _add_bench_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--summary", help="write per-method mean/std CSV here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="sensitivity sweep over one hyperparameter")
    p.add_argument("--param", required=True, choices=harness.SWEEP_PARAMETERS)
    p.add_argument("--values", required=True, type=_floats)
    _add_bench_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--records", help="also write all trial records here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="compare loss variants on shared samples")
    p.add_argument("--variants", type=_names, default=list(VARIANTS))
    _add_bench_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--summary")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("landscape", help="loss as a function of the bandwidth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=_ints)
    p.add_argument("--padding", type=float, default=0.1)
    p.add_argument("--h-min", type=float, default=0.01)
    p.add_argument("--h-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--log", action="store_true", help="log-spaced bandwidths")
    p.add_argument("--out", required=True)
    _add_loss_args(p)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("mnist", help="benchmark on one MNIST digit density")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--digit", type=int, default=1)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", type=_names)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.set_defaults(func=cmd_mnist)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except Exception as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2 if isinstance(exc, CLIError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
