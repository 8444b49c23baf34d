"""Command-line front end: plan | extract | pretrain | train | eval | sweep | plot.

Exit codes: 0 on success, 2 on a configuration problem (bad key, bad
value, malformed input file), 3 on a pipeline stage failure. The env
var RXR_THREADS caps numeric-library parallelism and must therefore be
honored before numpy is first imported.
"""

from __future__ import annotations

import os
import sys

if "RXR_THREADS" in os.environ:
    _n = os.environ["RXR_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

import argparse

from . import bench
from .config import ConfigError, load_config, parse_config
from .plot import CURVE_KINDS, plot_curves


def _load(args) -> dict:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _cmd_stage(upto):
    def fn(args):
        cfg = _load(args)
        rec = bench.run(cfg, args.out, upto=upto,
                        resets_path=getattr(args, "resets", None),
                        init_policy_path=getattr(args, "init", None))
        keys = ("coverage", "buffer_size", "final_return", "eval.median_progress",
                "eval.success_rate")
        shown = {k: rec.final_metrics[k] for k in keys if k in rec.final_metrics}
        print(f"{rec.out_dir}: {shown}")
        return 0
    return fn


def _cmd_sweep(args):
    base = _load(args)
    key = bench.AXIS_KEYS.get(args.axis)
    if key is None:
        raise ConfigError(f"unknown sweep axis {args.axis!r}")
    want = type(base[key])
    try:
        values = [tok if want is str else want(tok)
                  for tok in args.values.split(",") if tok]
    except ValueError as e:
        raise ConfigError(f"bad sweep values {args.values!r}: {e}") from None
    spec = bench.SweepSpec(base=base, axis=args.axis, values=values,
                           seeds=args.seeds, upto=args.upto)
    res = bench.sweep(spec, args.out)
    print(f"{args.out}: {res['verdicts']}")
    return 0


def _cmd_plot(args):
    labeled = []
    for item in args.series:
        label, _, paths = item.partition("=")
        if not label or not paths:
            raise ConfigError(f"--series wants LABEL=csv[,csv...], got {item!r}")
        labeled.append((label, paths.split(",")))
    try:
        plot_curves(labeled, args.kind, args.out, title=args.title)
    except (ValueError, OSError) as e:
        raise ConfigError(str(e)) from e
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rxr",
                                description="tree-planning + reset-distribution RL lab")
    sub = p.add_subparsers(dest="command", required=True)

    stage_of = {"plan": "plan", "extract": "extract", "pretrain": "pretrain",
                "train": "train", "eval": "eval"}
    for name, upto in stage_of.items():
        sp = sub.add_parser(name, help=f"run the pipeline through the {name} stage")
        sp.add_argument("--config", help="key = value config file (defaults if omitted)")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", default=None, help="output dir (default: runs/<stamp>)")
        if name in ("train", "eval"):
            sp.add_argument("--resets", default=None,
                            help="prebuilt reset-buffer file (skips planning for RXR)")
            sp.add_argument("--init", default=None,
                            help="warm-start actor checkpoint (.rxrp)")
        sp.set_defaults(fn=_cmd_stage(upto))

    sp = sub.add_parser("sweep", help="run one config axis across values x seeds")
    sp.add_argument("--config", help="base config file")
    sp.add_argument("--seed", type=int, default=None, help="base seed")
    sp.add_argument("--axis", required=True, choices=sorted(bench.AXIS_KEYS))
    sp.add_argument("--values", required=True, help="comma-separated axis values")
    sp.add_argument("--seeds", type=int, default=3, help="seeds per cell")
    sp.add_argument("--upto", default="eval", choices=bench.STAGES,
                    help="how far each cell runs")
    sp.add_argument("--out", required=True, help="sweep output dir")
    sp.set_defaults(fn=_cmd_sweep)

    sp = sub.add_parser("plot", help="render curve CSVs to one SVG")
    sp.add_argument("--series", action="append", required=True,
                    metavar="LABEL=csv[,csv...]",
                    help="one line (band across the csvs); repeatable")
    sp.add_argument("--kind", default="return", choices=sorted(CURVE_KINDS))
    sp.add_argument("--title", default="")
    sp.add_argument("--out", required=True, help="output .svg path")
    sp.set_defaults(fn=_cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"rxr: config error: {e}", file=sys.stderr)
        return 2
    except bench.StageError as e:
        print(f"rxr: stage failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"rxr: config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
