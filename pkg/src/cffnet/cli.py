"""Command-line entry point: ``cffnet {train,compare,eval,check}``.

Exit codes: 0 success, 1 config/usage error, 2 data error,
3 numeric failure, 4 gradient check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .dataio import load_dataset
from .errors import ConfigError, ContractError, FormatError, NumericError
from .evalstats import evaluate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3, 4

T_CRITICAL_NOTE = (
    "No p-values are computed. Two-sided 5%% critical |t| values: "
    "df=1: 12.71, df=2: 4.30, df=3: 3.18, df=4: 2.78, df=5: 2.57, df=9: 2.26, df=19: 2.09, df=29: 2.05."
)

# (flag, type, help); None type means the string is passed through
CONFIG_FLAGS = [
    ("--variant", None, "baseline | fcff | acff"),
    ("--seed", None, "RNG seed"),
    ("--epochs-per-layer", None, "training epochs per layer"),
    ("--batch-size", None, "minibatch size, 0 = full batch"),
    ("--lr", None, "Adam learning rate for weights"),
    ("--gamma-lr", None, "learning rate for gamma (acff)"),
    ("--gamma-init", None, "initial gamma (fcff/acff)"),
    ("--theta", None, "goodness threshold"),
    ("--alpha-mode", None, "ones | row-normalized"),
    ("--widths", None, "layer widths including the input, e.g. 784,500,500"),
    ("--train-images", None, "IDX3 training images"),
    ("--train-labels", None, "IDX1 training labels"),
    ("--test-images", None, "IDX3 test images"),
    ("--test-labels", None, "IDX1 test labels"),
    ("--data-dir", None, "directory holding the four canonical IDX files"),
    ("--train-split", None, "use the first N training samples"),
    ("--out-dir", None, "output directory"),
    ("--eval-every", None, "sample train/test accuracy every K epochs (0 = never)"),
    ("--goodness", None, "mean | sum of squared activations"),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    for flag, _, help_ in CONFIG_FLAGS:
        p.add_argument(flag, help=help_)
    p.add_argument("--no-normalize-first", dest="normalize_first", action="store_const", const="false",
                   help="feed raw pixels to the first layer instead of L2-normalized ones")
    p.add_argument("--skip-first-layer-score", dest="skip_first_layer_score", action="store_const", const="true",
                   help="leave the first layer out of the label-scan score")


def _overrides(args):
    keys = [harness.normalize_key(f) for f, _, _ in CONFIG_FLAGS] + ["normalize_first", "skip_first_layer_score"]
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def build_parser():
    parser = _Parser(prog="cffnet", description="Forward-Forward and collaborative FF experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one variant and export metrics")
    _add_config_flags(p)

    p = sub.add_parser("compare", help="run all variants over several seeds", epilog=T_CRITICAL_NOTE)
    _add_config_flags(p)
    p.add_argument("--seeds", default="1,2,3", help="comma-separated seeds")

    p = sub.add_parser("eval", help="evaluate a saved model on the test set")
    _add_config_flags(p)
    p.add_argument("--model", required=True, help="run directory or its model/ directory")

    p = sub.add_parser("check", help="verify analytic gradients against finite differences")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args):
    cfg = harness.load_config(args.config, _overrides(args))
    record = harness.run_experiment(cfg)
    print(f"{cfg.run_id}: train_acc={record.train_report.accuracy:.4f} "
          f"test_acc={record.test_report.accuracy:.4f} -> {record.out_path}")
    return EXIT_OK


def _cmd_compare(args):
    cfg = harness.load_config(args.config, _overrides(args))
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("seeds", f"cannot parse {args.seeds!r}") from None
    comp = harness.compare_variants(cfg, seeds)
    print(f"{'variant':10s} {'test mean':>10s} {'test sd':>9s} {'impr abs':>9s} {'impr rel':>9s}")
    for row in comp.table:
        print(f"{row['variant']:10s} {row['test_acc_mean']:10.4f} {row['test_acc_sd']:9.4f} "
              f"{row['improvement_abs']:+9.4f} {row['improvement_rel']:+9.2%}")
    for (a, b), s in comp.stats.items():
        flag = f"  [degenerate: {s.note}]" if s.degenerate else ""
        print(f"{a} vs {b}: diff={s.mean_difference:+.4f} t={s.t_statistic:.3f} "
              f"df={s.degrees_of_freedom} d={s.cohens_d:.3f}{flag}")
    print(f"written to {cfg.out_dir}")
    return EXIT_OK


def _cmd_eval(args):
    cfg = harness.load_config(args.config, _overrides(args))
    net = harness.load_network(args.model)
    paths = (cfg.path("test_images"), cfg.path("test_labels"))
    if None in paths:
        raise ConfigError("test_images", "test set paths not set")
    report = evaluate(net, load_dataset(*paths), cfg.skip_first_layer_score)
    print(f"test_acc={report.accuracy:.4f} on {report.total} samples")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps({"test": report.to_dict()}, indent=1) + "\n")
    return EXIT_OK


def _cmd_check(args):
    summary = harness.check(cases=args.cases, seed=args.seed, h=args.h, tol=args.tol)
    for name, r in (("weights/bias", summary.report), ("gamma", summary.gamma_report)):
        print(f"{name:12s} max_rel_err={r.max_relative_error:.3e} worst={r.worst_parameter_index} "
              f"checked={r.checked} excluded={r.excluded} pass={r.passed}")
    print(f"full-propagation mode (informational) max_rel_err={summary.report.full_mode_max_relative_error:.3e}")
    print(f"cases={summary.report.cases_run} redrawn={summary.redrawn} tol={args.tol:g} "
          f"time={summary.seconds:.1f}s -> {'PASS' if summary.passed else 'FAIL'}")
    return EXIT_OK if summary.passed else EXIT_CHECK


COMMANDS = {"train": _cmd_train, "compare": _cmd_compare, "eval": _cmd_eval, "check": _cmd_check}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
