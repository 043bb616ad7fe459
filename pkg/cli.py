#!/usr/bin/env python3
"""
Run weak value amplification experiments from a JSON experiment file.

Usage:
    python cli.py list-scenarios
    python cli.py validate --config configs/amplify.json
    python cli.py run --config configs/amplify.json
    python cli.py run --config configs/sweep_z.json --seed 7 --out-dir out/
    python cli.py run --config configs/reconstruct.json --exact-only -v

Environment variables (lowest priority, the experiment file wins):
    WVA_SEED     - run seed when neither --seed nor shots.seed is given
    WVA_OUT_DIR  - output directory
    WVA_WORKERS  - worker pool size for sweep points
    WVA_N_MAX    - Fock-space truncation
"""

import argparse
import json
import logging
import os
import sys

import experiments
import records
from config import SCENARIO_HELP, SCENARIOS, load_config, resolve_seed
from errors import EXIT_OK, ConfigurationError, WvaError, exit_code_for
from utils import format_duration

logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(
        description="Weak value amplification simulator for a trapped-ion pointer",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose",
        action="store_true",
        help="Show debug output",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run", parents=[common], help="Run a scenario and write its output files"
    )
    run.add_argument("--config", required=True, help="Experiment file (JSON)")
    run.add_argument(
        "--seed",
        type=int,
        help="Run seed; overrides shots.seed and WVA_SEED",
    )
    run.add_argument("--out-dir", help="Output directory (default: config out_dir)")
    run.add_argument(
        "--exact-only",
        action="store_true",
        help="Skip Monte Carlo sampling and heralding",
    )
    run.add_argument(
        "--workers",
        type=int,
        help="Worker pool size (default: config workers)",
    )

    validate = sub.add_parser(
        "validate", parents=[common],
        help="Print the resolved config and derived quantities",
    )
    validate.add_argument("--config", required=True, help="Experiment file (JSON)")

    sub.add_parser(
        "list-scenarios", parents=[common], help="List the available scenarios"
    )
    return parser


def setup_logging(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[logging.StreamHandler()],
    )


def _scenario_hint(path):
    """Best-effort scenario name for error messages before validation."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, ValueError):
        return None
    if isinstance(raw, dict) and isinstance(raw.get("scenario"), str):
        return raw["scenario"]
    return None


def cmd_list_scenarios(args):
    for name in SCENARIOS:
        print(f"{name:<12} {SCENARIO_HELP[name]}")
    return EXIT_OK


def cmd_validate(args):
    config = load_config(args.config)
    seed, source = resolve_seed(config)
    report = {
        "config": config.model_dump(mode="json"),
        "seed": seed,
        "seed_source": source,
        "derived": experiments.derived_quantities(config),
    }
    print(json.dumps(records.jsonable(report), indent=2, sort_keys=True))
    for point in report["derived"]["postselection"]:
        if point["regime"] != "weak-coupling limit":
            logger.warning(
                "g=%g: %s (|A_w| g = %s)", point["g"], point["regime"],
                "undefined" if point["coupling_strength"] is None
                else f"{point['coupling_strength']:.3g}",
            )
    return EXIT_OK


def cmd_run(args):
    config = load_config(args.config)
    if args.workers is not None and args.workers < 1:
        raise ConfigurationError(
            f"--workers must be at least 1, got {args.workers}",
            [("workers", "must be >= 1")],
        )
    seed, source = resolve_seed(config, args.seed)
    out_dir = args.out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    manifest = experiments.run(
        config, seed, source, out_dir,
        exact_only=args.exact_only,
        workers=args.workers,
    )
    logger.info(
        "%s finished in %s", config.scenario,
        format_duration(manifest["timing"]["wall_seconds"]),
    )
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "validate": cmd_validate,
    "list-scenarios": cmd_list_scenarios,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except WvaError as e:
        scenario = _scenario_hint(args.config) if hasattr(args, "config") else None
        prefix = f"{scenario}: " if scenario else ""
        logger.error(f"{prefix}{e}")
        if isinstance(e, ConfigurationError):
            for field, message in e.field_errors:
                logger.error(f"  {field}: {message}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
