"""Command-line entry point for the repulsive cyclical SGHMC experiments.

Subcommands ``toy2d``, ``ablate``, ``diversity`` and ``ensemble-eval`` run
experiments; ``validate-config`` checks a config and prints it with every
default filled in.  Exit codes: 0 success, 2 config or input error,
3 chain divergence, 1 any other failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from .config import ExperimentConfig, default_config, load_config
from .core import ConfigError, DivergenceError, InvalidInputError, RcsghmcError
from .experiments import COMMANDS

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

# task preset used when no config file (or no task block) is given
DEFAULT_TASK = {
    "toy2d": "toy-2d",
    "ablate": "toy-2d",
    "diversity": "synthetic-classifier",
    "ensemble-eval": "synthetic-classifier",
    "validate-config": "toy-2d",
}


def _seed_list(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _value_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"values must be comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcsghmc", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, runs=True):
        p.add_argument("--config", help="JSON config file (defaults are used when omitted)")
        p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, e.g. 1,2,3")
        if runs:
            p.add_argument("--outdir", help="output root (overrides the config's outdir)")
            p.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")

    common(sub.add_parser("toy2d", help="sampler runs on the Gaussian-mixture toy"))
    ablate = sub.add_parser("ablate", help="sweep xi, cycles or the repulsion batch size")
    common(ablate)
    ablate.add_argument("--sweep", choices=["xi", "cycles", "repulsion_batch"])
    ablate.add_argument("--values", type=_value_list, help="comma-separated sweep values")
    common(sub.add_parser("diversity", help="pairwise representation distances with and without repulsion"))
    common(sub.add_parser("ensemble-eval", help="MAP baseline against the sample ensemble"))
    common(sub.add_parser("validate-config", help="validate a config and print the effective config"), runs=False)
    return parser


def resolve_config(args) -> ExperimentConfig:
    kind = DEFAULT_TASK[args.command]
    cfg = load_config(args.config, kind) if args.config else default_config(kind)
    if args.seeds is not None:
        cfg = cfg.replace(seeds=args.seeds)
    if getattr(args, "sweep", None) or getattr(args, "values", None):
        ablation = {}
        if args.sweep:
            ablation["parameter"] = args.sweep
        if args.values:
            ablation["values"] = args.values
        cfg = cfg.replace(ablation=ablation)
    return cfg


def _report(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.command == "validate-config":
            print(json.dumps(cfg.to_dict(include_outdir=True), indent=2, sort_keys=True))
            return EXIT_OK
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        outdir = args.outdir or cfg.outdir
        result = COMMANDS[args.command](cfg, outdir, args.jobs)
    except ConfigError as err:
        _report({"error": "config", "message": str(err)})
        return EXIT_CONFIG
    except InvalidInputError as err:
        _report({"error": "invalid-input", "message": str(err)})
        return EXIT_CONFIG
    except DivergenceError as err:
        _report(err.to_dict())
        return EXIT_DIVERGED
    except RcsghmcError as err:
        _report({"error": "failure", "message": str(err)})
        return EXIT_FAILURE

    if result.diverged:
        for r in result.diverged:
            _report({**r["error"], "seed": r["seed"]})
        print(result.path)
        return EXIT_DIVERGED
    print(result.path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
