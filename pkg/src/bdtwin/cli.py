"""Command line: run, sweep, validate, emit-config."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, ExperimentConfig, emit_default_yaml, load_config, default_profile

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 1, 2, 3


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig.from_dict(default_profile())
    raw = cfg.raw
    changed = False
    if getattr(args, "seed", None):
        raw["run"]["seeds"] = args.seed
        changed = True
    if getattr(args, "V", None):
        raw["lyapunov"]["V"] = args.V
        changed = True
    if getattr(args, "T", None) is not None:
        raw["run"]["T"] = args.T
        changed = True
    if getattr(args, "policy", None):
        raw["run"]["policies"] = args.policy
        changed = True
    if getattr(args, "out", None):
        raw["run"]["output_dir"] = args.out
        changed = True
    if getattr(args, "strict", False):
        raw["run"]["mode"] = "strict"
        changed = True
    if getattr(args, "workers", None):
        raw["run"]["workers"] = args.workers
        changed = True
    return ExperimentConfig.from_dict(raw) if changed else cfg


def _common(p):
    p.add_argument("-c", "--config", help="YAML config (missing keys fall back to default)")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    p.add_argument("--V", type=float, action="append", help="Lyapunov weight V (repeatable)")
    p.add_argument("--T", type=int, help="number of slots")
    p.add_argument("--policy", action="append", choices=["DPRA", "WDPO", "WTCM"],
                   help="policy (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--strict", action="store_true", help="abort when a gateway cannot cover any partition from its energy")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdtwin", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="simulate every (seed, V, policy) cell")
    _common(p)
    p = sub.add_parser("sweep", help="V sweep with common random numbers; writes sweep.csv")
    _common(p)
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--plot", action="store_true", help="also write SVG line plots")
    p = sub.add_parser("validate", help="oracle / statistics / drift checks")
    _common(p)
    p.add_argument("kind", choices=["oracle", "statistics", "drift"])
    p.add_argument("--instances", type=int, default=200, help="oracle instances")
    sub.add_parser("emit-config", help="print the default YAML profile")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .harness import (SlotAbort, sweep, validate_drift, validate_oracle,
                          validate_statistics)

    if args.cmd == "emit-config":
        sys.stdout.write(emit_default_yaml())
        return EXIT_OK
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.cmd in ("run", "sweep"):
            if args.cmd == "sweep" and len(cfg.V_list) < 2:
                print("config error: sweep needs at least two V values", file=sys.stderr)
                return EXIT_CONFIG
            results = sweep(cfg, workers=getattr(args, "workers", None) or cfg.workers,
                            plot=getattr(args, "plot", False))
            for r in results:
                print(json.dumps({k: r[k] for k in ("seed", "V", "policy", "n_slots", "mean_tau")
                                  if k in r}))
            return EXIT_OK
        if args.kind == "oracle":
            rep = validate_oracle(args.instances, out_dir=cfg.output_dir)
        elif args.kind == "statistics":
            rep = validate_statistics()
        else:
            rep = validate_drift(cfg, T=cfg.T)
        print(rep.line())
        print(json.dumps(rep.details, default=str))
        return EXIT_OK if rep.passed else EXIT_VALIDATION
    except SlotAbort as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
