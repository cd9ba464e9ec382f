"""Command-line entry point.

`distrack run --config cfg.yaml [--trials N --seed S --out DIR
--algorithm NAME --consensus-steps L]` runs a configured experiment and
writes results.csv / summary.json; flags override config values.
"""

from __future__ import annotations

import argparse
import sys

from .harness import ConfigError, ExperimentConfig, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distrack",
        description="Distributed multi-object tracking simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a configured Monte Carlo experiment")
    run_p.add_argument("--config", required=True, help="YAML or JSON experiment config")
    run_p.add_argument("--trials", type=int, help="override trial count")
    run_p.add_argument("--seed", type=int, help="override RNG seed")
    run_p.add_argument("--out", help="override output directory")
    run_p.add_argument("--algorithm", help="override tracking algorithm")
    run_p.add_argument("--consensus-steps", type=int, dest="consensus_steps",
                       help="override consensus rounds per scan")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command != "run":
        print(f"unknown command: {args.command}", file=sys.stderr)
        return 2
    overrides = {
        "trials": args.trials,
        "seed": args.seed,
        "out": args.out,
        "algorithm": args.algorithm,
        "consensus_steps": args.consensus_steps,
    }
    try:
        cfg = ExperimentConfig.from_file(args.config, overrides=overrides)
        result = run_experiment(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure, not a usage problem
        print(f"error: {e}", file=sys.stderr)
        return 1
    s = result["summary"]
    line = (f"{s['algorithm']}: trials={s['trials']} steps={s['steps']} "
            f"nodes={s['nodes']} mean_{s['metric']}={s['mean']:.6g}")
    if cfg.out:
        line += f" out={cfg.out}"
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
