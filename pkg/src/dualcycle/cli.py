"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 training fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import metrics, pipeline
from .errors import ConfigError, DualCycleError, TrainingFault, VolumeIOError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4


def _load_config(args) -> pipeline.ExperimentConfig:
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.methods:
        raw["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    return pipeline.ExperimentConfig.from_dict(raw)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="base seed for phantoms, simulation and training")
    common.add_argument("--out", help="output directory")
    common.add_argument("--methods", help="comma separated subset of " + ",".join(pipeline.METHODS))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dualcycle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="generate the synthetic phantom dataset")
    sub.add_parser("simulate", parents=[common], help="simulate View A / View B for every phantom")

    p = sub.add_parser("preprocess", parents=[common], help="truncate, normalize and resample a volume")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--floor", type=float, default=78.0)
    p.add_argument("--spacing", type=float, default=0.1625)

    p = sub.add_parser("train", parents=[common], help="train Dual-Cycle on one simulated view pair")
    p.add_argument("--volume", type=int, default=0)
    p.add_argument("--single-view", action="store_true", help="single-view ablation")

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct a view pair from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--volume", type=int, default=0)
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--output", default=None)

    p = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM of volumes against a ground truth")
    p.add_argument("ground_truth")
    p.add_argument("volumes", nargs="+")
    p.add_argument("--json", dest="json_out", default=None)

    p = sub.add_parser("run", parents=[common], help="full experiment and summary table")
    p.add_argument("--jobs", type=int, default=1, help="process volumes in parallel")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(args)
        if args.command == "phantom":
            print(pipeline.cmd_phantom(config))
        elif args.command == "simulate":
            print(pipeline.cmd_simulate(config))
        elif args.command == "preprocess":
            pipeline.cmd_preprocess(args.input, args.output, args.floor, args.spacing)
            print(args.output)
        elif args.command == "train":
            method = "single_view_ablation" if args.single_view else "dual_cycle"
            print(pipeline.cmd_train(config, args.volume, method))
        elif args.command == "reconstruct":
            print(pipeline.cmd_reconstruct(config, args.checkpoint, args.volume, args.tile, args.output))
        elif args.command == "evaluate":
            rows = pipeline.cmd_evaluate(args.ground_truth, args.volumes)
            if args.json_out:
                Path(args.json_out).write_text(metrics.rows_to_json(rows) + "\n")
            sys.stdout.write(metrics.format_table(rows))
        elif args.command == "run":
            result = pipeline.cmd_run(config, jobs=args.jobs)
            sys.stdout.write(metrics.format_table(result["rows"]) if result["rows"] else "")
            if not result["rows"]:
                kinds = {f["kind"] for f in result["failures"]}
                return EXIT_TRAINING if kinds == {"TrainingFault"} else EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (DualCycleError, VolumeIOError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
