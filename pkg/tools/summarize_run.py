#!/usr/bin/env python3
"""
Summarize an output directory written by `cli.py run`.

Reads manifest.json and every CSV it lists back through the record parsers,
so a successful run also checks that the files are self-consistent.

Usage:
    python tools/summarize_run.py output/amplify
    python tools/summarize_run.py output/sweep_z --series "theta=0.2"
    python tools/summarize_run.py output/reconstruct --json
"""

import argparse
import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import records


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        description="Summarize a weak value amplification run directory",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("directory", help="Output directory containing manifest.json")
    parser.add_argument(
        "--series",
        help="Only report this curve series",
    )
    parser.add_argument(
        "--json",
        action="store_true",
        help="Print the summary as JSON",
    )
    return parser.parse_args(argv)


def _finite(values):
    return [v for v in values if not math.isnan(v)]


def summarize_curves(rows, only=None):
    """Per-series row counts, x range and largest |exact - simulated|."""
    series = {}
    for row in rows:
        if only and row.series != only:
            continue
        entry = series.setdefault(row.series, {"rows": 0, "x": [], "deviation": []})
        entry["rows"] += 1
        entry["x"].append(row.x)
        if not (math.isnan(row.exact) or math.isnan(row.simulated)):
            entry["deviation"].append(abs(row.exact - row.simulated))
    summary = {}
    for name, entry in series.items():
        xs = _finite(entry["x"])
        summary[name] = {
            "rows": entry["rows"],
            "x_min": min(xs) if xs else None,
            "x_max": max(xs) if xs else None,
            "max_deviation": max(entry["deviation"]) if entry["deviation"] else None,
        }
    return summary


def summarize(directory, only=None):
    manifest = records.read_manifest(directory)
    report = {
        "scenario": manifest["scenario"],
        "seed": manifest["seed"],
        "seed_source": manifest["seed_source"],
        "version": manifest["version"],
        "files": {},
    }
    for name in manifest["files"]:
        path = os.path.join(directory, name)
        if name == f"{manifest['scenario']}.csv":
            report["curves"] = summarize_curves(records.read_curves(path), only)
            report["files"][name] = "curves"
        elif name.startswith("signals_"):
            signals = records.read_signals(path)
            report["files"][name] = f"{len(signals)} {signals.kind} points"
        elif name.startswith("reconstruction_") and name.endswith(".csv"):
            _, probabilities, meta = records.read_reconstruction(path)
            report["files"][name] = (
                f"sum={probabilities.sum():.6f} F={meta['objective']:.3e} "
                f"bound={'active' if meta['kinetic_bound_active'] else 'inactive'}"
            )
    return report


def print_report(report):
    print(f"Scenario: {report['scenario']}")
    print(f"Seed:     {report['seed']} ({report['seed_source']})")
    print(f"Version:  {report['version']}")
    print()
    for name, entry in sorted(report.get("curves", {}).items()):
        deviation = entry["max_deviation"]
        print(
            f"  {name:<24} {entry['rows']:>5} rows  "
            f"x=[{entry['x_min']:.4g}, {entry['x_max']:.4g}]  "
            f"max|exact-simulated|="
            + ("n/a" if deviation is None else f"{deviation:.3e}")
        )
    for name, description in sorted(report["files"].items()):
        if description != "curves":
            print(f"  {name}: {description}")


def main(argv=None):
    args = parse_args(argv)
    if not os.path.isfile(os.path.join(args.directory, "manifest.json")):
        print(f"Error: no manifest.json in {args.directory}", file=sys.stderr)
        return 1
    try:
        report = summarize(args.directory, args.series)
    except (ValueError, KeyError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(records.jsonable(report), indent=2, sort_keys=True))
    else:
        print_report(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
