"""Command-line entry point: ``hazardtwin <stage|pipeline> [--config PATH] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import load_config
from .exceptions import ConfigError, HazardTwinError, MissingArtifactError, NumericalError
from .pipeline import STAGES, run_pipeline, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 0, 2, 3, 4


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", metavar="DIR", help="override [run] out_dir")
    common.add_argument("--resimulate-oh", action="store_true",
                        help="score overheating hours by re-running the thermal model for microgrid scenarios")
    p = argparse.ArgumentParser(prog="hazardtwin", description="Compound-hazard district twin pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline"):
        sub.add_parser(name, parents=[common], help="run all stages" if name == "pipeline" else f"run the {name} stage")
    return p


def _config(args):
    cfg = load_config(args.config, overrides={"seed": args.seed, "out_dir": args.out})
    if args.resimulate_oh:
        cfg = dataclasses.replace(cfg, intervention=dataclasses.replace(cfg.intervention, resimulate_oh=True))
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "pipeline":
            summary = run_pipeline(cfg)
            print(json.dumps({k: summary[k] for k in ("r_eq", "pooled_rmse", "cost_front") if k in summary}))
        else:
            run_stage(args.command, cfg)
            print(f"{args.command}: ok -> {cfg.out_dir}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except HazardTwinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
