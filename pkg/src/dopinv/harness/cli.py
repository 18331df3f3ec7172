"""Command line interface.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure,
4 genericity failure in lattice recovery.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .. import lattice as lat
from ..elliptic import SolverError
from ..kaczmarz import LKStagnation
from ..levelset import StagnationError
from ..mesh import read_field
from ..metrics import metrics
from . import config as cfgmod
from .config import ConfigError, ExperimentConfig
from .experiments import (RunFailure, run_experiment, run_lattice, synthesize_dataset,
                          write_dataset)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GENERICITY = 0, 2, 3, 4


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    p.add_argument("--config", help="key = value file; flags override its entries")
    for f in fields(ExperimentConfig):
        if f.name in skip:
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="VALUE")


def _config(args, base: ExperimentConfig | None = None, **forced) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    if args.config:
        cfg = cfgmod.load(args.config, cfg)
    flags = {}
    for f in fields(ExperimentConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            flags[f.name] = cfgmod.parse_value(f.name, raw)
    flags.update(forced)
    return cfg.replace(**flags)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_forward(args) -> int:
    cfg = _config(args, noise=0.0)
    syn = synthesize_dataset(cfg)
    out = Path(cfg.output_dir)
    write_dataset(syn, out)
    _print({"sources": len(syn.sources), "output": str(out / "traces.csv")})
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = _config(args)
    syn = synthesize_dataset(cfg)
    out = Path(cfg.output_dir)
    write_dataset(syn, out)
    _print({"sources": len(syn.sources), "delta": syn.delta, "output": str(out)})
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _config(args, method=args.method)
    _print(run_experiment(cfg))
    return EXIT_OK


def cmd_lattice(args) -> int:
    cfg = _config(args, method="lattice")
    _print(run_lattice(cfg, recover=args.action == "recover"))
    return EXIT_OK


def cmd_metrics(args) -> int:
    m = metrics(read_field(args.reconstruction), read_field(args.truth))
    _print(m._asdict())
    return EXIT_OK


def cmd_preset(args) -> int:
    base = cfgmod.preset(args.name)
    cfg = _config(args, base=base)
    _print(run_experiment(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dopinv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log iteration progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="phantom to noise-free current traces")
    _add_config_flags(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("synthesize", help="phantom to (noisy) dataset files")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("reconstruct", help="run the level-set or Landweber-Kaczmarz reconstruction")
    _add_config_flags(p, skip=("method",))
    p.add_argument("--method", choices=("levelset", "lk"), required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("lattice", help="lattice forward solve or diagonal-sweep recovery")
    p.add_argument("action", choices=("solve", "recover"))
    _add_config_flags(p, skip=("method",))
    p.set_defaults(func=cmd_lattice)

    p = sub.add_parser("metrics", help="compare a reconstruction field with the truth")
    p.add_argument("reconstruction")
    p.add_argument("truth")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("preset", help="run a named experiment")
    p.add_argument("name", choices=sorted(cfgmod.PRESETS))
    _add_config_flags(p)
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, lat.LatticeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except lat.GenericityError as exc:
        print(f"genericity failure: {exc}", file=sys.stderr)
        return EXIT_GENERICITY
    except (RunFailure, SolverError, StagnationError, LKStagnation, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
