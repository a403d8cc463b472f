"""Command-line experiment runner.

Subcommands: train (one run), sweep (grid of runs), plot (SVG from metrics
CSVs), gradcheck (finite-difference audit of the backward pass), and
disproportion (per-layer gradient-magnitude table for dense chains).

Exit codes: 0 success, 1 usage or input error, 2 check failure,
3 divergence.
"""

import argparse
import sys

from . import plots, train
from .config import ConfigError, make_config, parse_config_file, parse_optional_int
from .net import (InitPolicy, build_reduced_net, disproportion_report, grad_check,
                  init)
from .optim import RULE_NAMES
from .rng import Xoshiro256, derive_seed

_SWEEP_DEFAULT_ETAS = [0.001, 0.003, 0.01, 0.03, 0.1]


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this project reserves 2 for failed
    checks, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_run_flags(p):
    p.add_argument("--config", help="config file of key = value lines")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--optimizer", choices=RULE_NAMES)
    p.add_argument("--eta", type=float)
    p.add_argument("--decay-m", dest="decay_m", type=float)
    p.add_argument("--decay-beta", dest="decay_beta", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--train-limit", dest="train_limit", type=parse_optional_int)
    p.add_argument("--test-limit", dest="test_limit", type=parse_optional_int)
    p.add_argument("--synthetic", action="store_const", const=True,
                   help="use the procedural blob dataset instead of IDX files")


_RUN_KEYS = ("out_dir", "data_dir", "seed", "optimizer", "eta", "decay_m",
             "decay_beta", "momentum", "batch_size", "steps", "eval_every",
             "train_limit", "test_limit", "synthetic")


def _collect_overrides(args):
    overrides = {}
    if args.config:
        overrides.update(parse_config_file(args.config))
    for key in _RUN_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    return overrides


def _comma_list(parse_one):
    def convert(s):
        return [parse_one(part.strip()) for part in s.split(",") if part.strip()]
    return convert


def build_parser():
    parser = _Parser(prog="pdlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="run one training configuration")
    _add_run_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="run a grid of configurations")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--grid-eta", type=_comma_list(float),
                         help="comma-separated learning rates to sweep")
    p_sweep.add_argument("--grid-optimizer", type=_comma_list(str),
                         help="comma-separated update rules to sweep")
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render an SVG from metrics CSVs")
    p_plot.add_argument("csvs", nargs="+", help="metrics CSV paths")
    p_plot.add_argument("--kind", choices=("accuracy_curve", "relative_delta_bars"),
                        default="accuracy_curve")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--smoothing", type=float, default=0.9)
    p_plot.add_argument("--y-min", dest="y_min", type=float,
                        help="lower y-axis bound for accuracy curves")
    p_plot.add_argument("--stride", type=int, default=15,
                        help="snapshot stride for the bar figure")
    p_plot.set_defaults(func=cmd_plot)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    p_gc.add_argument("--h", type=float, default=1e-5)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_dis = sub.add_parser("disproportion",
                           help="per-layer gradient magnitudes of a dense chain")
    p_dis.add_argument("--depth", type=int, default=4)
    p_dis.add_argument("--width", type=int, default=64)
    p_dis.add_argument("--activation", choices=("sigmoid", "relu"), default="sigmoid")
    p_dis.add_argument("--stddev", type=float, default=0.1)
    p_dis.add_argument("--seed", type=int, default=0)
    p_dis.add_argument("--out-csv", dest="out_csv", help="also write the table as CSV")
    p_dis.set_defaults(func=cmd_disproportion)
    return parser


def cmd_train(args):
    overrides = _collect_overrides(args)
    cfg = make_config(overrides)
    result = train.run(cfg)
    for key, value in result.summary.items():
        print(f"{key} = {value}")
    print(f"metrics: {result.metrics_path}")
    if result.status == "diverged":
        print("run diverged; see summary.json for the aborting step", file=sys.stderr)
        return 3
    return 0


def cmd_sweep(args):
    overrides = _collect_overrides(args)
    cfg = make_config(overrides)
    grid = {}
    if args.grid_eta:
        grid["eta"] = args.grid_eta
    if args.grid_optimizer:
        for name in args.grid_optimizer:
            if name not in RULE_NAMES:
                raise ConfigError(f"unknown update rule {name!r} in --grid-optimizer")
        grid["optimizer"] = args.grid_optimizer
    if not grid:
        grid["eta"] = list(_SWEEP_DEFAULT_ETAS)
    result = train.sweep(cfg, grid, explicit=tuple(overrides))
    for cell in result.cells:
        acc = "" if cell.final_accuracy is None else f"  final_acc={cell.final_accuracy:.4f}"
        err = f"  ({cell.error})" if cell.error else ""
        print(f"{cell.name:40s} {cell.status}{acc}{err}")
    if result.best is not None:
        print(f"best: {result.best}")
    print(f"comparison: {result.comparison_path}")
    if result.svg_path:
        print(f"curves: {result.svg_path}")
    return 0


def cmd_plot(args):
    out = plots.plot(args.csvs, args.kind, args.out, smoothing=args.smoothing,
                     y_min=args.y_min, stride=args.stride)
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args):
    net = build_reduced_net()
    init(net, InitPolicy(seed=derive_seed(args.seed, 0x6C)))
    rng = Xoshiro256(derive_seed(args.seed, 0x17))
    images = rng.uniforms(4 * 8 * 8).reshape(4, 8, 8, 1)
    labels = [0, 1, 2, 3]
    report = grad_check(net, (images, labels), h=args.h, tolerance=args.tolerance)
    print(report)
    return 0 if report.passed else 2


def cmd_disproportion(args):
    report = disproportion_report(args.depth, args.width, args.activation,
                                  args.stddev, args.seed)
    print(report)
    if args.out_csv:
        report.write_csv(args.out_csv)
        print(f"wrote {args.out_csv}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"pdlab: config error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"pdlab: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
