"""Output files: curve CSVs, signal records, reconstructions and the manifest.

This is the ONLY module that writes result files. Every writer has a
matching reader so outputs can be loaded back for checks and tooling.
"""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from reconstruction import SignalSet
from utils import format_float, parse_float

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

CURVE_COLUMNS = (
    "series", "x", "exact", "weak_limit", "simulated", "simulated_sigma",
    "kept_shots",
)
SIGNAL_COLUMNS = ("k", "value", "sigma", "kind", "quadrature", "shots")
RECONSTRUCTION_COLUMNS = ("z", "probability")

NAN = float("nan")


@dataclass(frozen=True)
class CurveRecord:
    """One row of a scenario curve. NaN marks a column that does not apply.

    kept_shots is None when no heralding took place.
    """

    series: str
    x: float
    exact: float = NAN
    weak_limit: float = NAN
    simulated: float = NAN
    simulated_sigma: float = NAN
    kept_shots: int = None

    def row(self):
        return [
            self.series,
            format_float(self.x),
            format_float(self.exact),
            format_float(self.weak_limit),
            format_float(self.simulated),
            format_float(self.simulated_sigma),
            "nan" if self.kept_shots is None else str(int(self.kept_shots)),
        ]

    @classmethod
    def from_row(cls, row):
        kept = row["kept_shots"]
        return cls(
            series=row["series"],
            x=parse_float(row["x"]),
            exact=parse_float(row["exact"]),
            weak_limit=parse_float(row["weak_limit"]),
            simulated=parse_float(row["simulated"]),
            simulated_sigma=parse_float(row["simulated_sigma"]),
            kept_shots=None if kept == "nan" else int(kept),
        )


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _write_rows(path, header, rows):
    _ensure_parent(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.debug("Wrote %s", path)


def _read_rows(path, header):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise ValueError(
                f"{path}: expected columns {','.join(header)}, "
                f"got {','.join(reader.fieldnames or ())}"
            )
        return list(reader)


# --- Curves ---


def write_curves(path, records):
    _write_rows(path, CURVE_COLUMNS, [r.row() for r in records])


def read_curves(path):
    return [CurveRecord.from_row(row) for row in _read_rows(path, CURVE_COLUMNS)]


# --- Signals ---


def write_signals(path, signals):
    rows = [
        [format_float(k), format_float(v), format_float(s), signals.kind,
         signals.quadrature, str(signals.shots)]
        for k, v, s in zip(signals.ks, signals.values, signals.sigmas)
    ]
    _write_rows(path, SIGNAL_COLUMNS, rows)


def read_signals(path):
    rows = _read_rows(path, SIGNAL_COLUMNS)
    if not rows:
        raise ValueError(f"{path}: signal file has no rows")
    kinds = {(r["kind"], r["quadrature"], r["shots"]) for r in rows}
    if len(kinds) != 1:
        raise ValueError(f"{path}: mixed kind/quadrature/shots rows")
    kind, quadrature, shots = kinds.pop()
    return SignalSet(
        ks=[parse_float(r["k"]) for r in rows],
        values=[parse_float(r["value"]) for r in rows],
        sigmas=[parse_float(r["sigma"]) for r in rows],
        kind=kind,
        quadrature=quadrature,
        shots=int(shots),
    )


# --- Reconstruction ---


def sidecar_path(csv_path):
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def write_reconstruction(path, result):
    """Write z,probability rows plus a JSON metadata sidecar."""
    rows = [
        [format_float(z), format_float(p)]
        for z, p in zip(result.grid.points, result.probabilities)
    ]
    _write_rows(path, RECONSTRUCTION_COLUMNS, rows)
    write_json(sidecar_path(path), result.metadata())


def read_reconstruction(path):
    """Returns (z, probabilities, metadata)."""
    rows = _read_rows(path, RECONSTRUCTION_COLUMNS)
    z = np.array([parse_float(r["z"]) for r in rows])
    p = np.array([parse_float(r["probability"]) for r in rows])
    return z, p, read_json(sidecar_path(path))


# --- JSON ---


def jsonable(value):
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path, payload):
    _ensure_parent(path)
    with open(path, "w") as f:
        json.dump(jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug("Wrote %s", path)


def read_json(path):
    with open(path) as f:
        return json.load(f)


def write_manifest(out_dir, manifest):
    path = os.path.join(out_dir, "manifest.json")
    write_json(path, {"schema_version": SCHEMA_VERSION, **manifest})
    return path


def read_manifest(out_dir):
    return read_json(os.path.join(out_dir, "manifest.json"))
