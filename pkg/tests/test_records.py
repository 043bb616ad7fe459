"""Tests for records module."""

import json
import math

import numpy as np
import pytest

import records
from reconstruction import Grid, ReconstructionResult, SignalSet
from records import CurveRecord


def _result():
    grid = Grid.uniform(-2.0, 2.0, 5)
    return ReconstructionResult(
        grid=grid,
        probabilities=np.array([0.1, 0.2, 0.4, 0.2, 0.1]),
        objective=1.5e-9,
        iterations=120,
        kinetic_bound_active=True,
        fisher_information=0.99,
        kinetic_bound=1.0,
        kinetic_source="extracted",
        best_restart=2,
        restarts=4,
    )


class TestCurves:
    def test_round_trip_preserves_values(self, tmp_path):
        rows = [
            CurveRecord("theta=0.1", 0.05, exact=-0.3, weak_limit=-0.4985,
                        simulated=-0.29, simulated_sigma=0.01, kept_shots=812),
            CurveRecord("theta=0.1", 0.1, exact=1 / 3),
        ]
        path = tmp_path / "sweep_z.csv"
        records.write_curves(str(path), rows)
        back = records.read_curves(str(path))
        assert back[0] == rows[0]
        assert back[1].exact == 1 / 3
        assert math.isnan(back[1].simulated)
        assert back[1].kept_shots is None

    def test_fixed_header_and_format(self, tmp_path):
        path = tmp_path / "c.csv"
        records.write_curves(str(path), [CurveRecord("a", 0.1, exact=2 / 3)])
        lines = path.read_text().splitlines()
        assert lines[0] == "series,x,exact,weak_limit,simulated,simulated_sigma,kept_shots"
        assert lines[1] == "a,0.10000000000000001,0.66666666666666663,nan,nan,nan,nan"

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y\n1,2\n")
        with pytest.raises(ValueError):
            records.read_curves(str(path))


class TestSignals:
    def test_round_trip(self, tmp_path):
        signals = SignalSet([0.0, 0.5], [0.0, 0.24], [0.02, 0.03], "sin", "p", 500)
        path = tmp_path / "signals_a_sin_p.csv"
        records.write_signals(str(path), signals)
        back = records.read_signals(str(path))
        assert np.array_equal(back.values, signals.values)
        assert (back.kind, back.quadrature, back.shots) == ("sin", "p", 500)

    def test_mixed_rows_rejected(self, tmp_path):
        path = tmp_path / "mixed.csv"
        path.write_text(
            "k,value,sigma,kind,quadrature,shots\n"
            "0,1,0.1,cos,z,10\n"
            "0.1,0,0.1,sin,z,10\n"
        )
        with pytest.raises(ValueError):
            records.read_signals(str(path))


class TestReconstruction:
    def test_round_trip_with_sidecar(self, tmp_path):
        path = tmp_path / "reconstruction_theta=0.2.csv"
        records.write_reconstruction(str(path), _result())
        z, p, meta = records.read_reconstruction(str(path))
        assert (tmp_path / "reconstruction_theta=0.2.json").exists()
        assert np.allclose(z, [-2, -1, 0, 1, 2])
        assert p.sum() == pytest.approx(1.0)
        assert meta["kinetic_source"] == "extracted"
        assert meta["best_restart"] == 2
        assert meta["kinetic_bound_active"] is True


class TestJson:
    def test_jsonable_converts_numpy_and_nan(self):
        payload = records.jsonable({
            "a": np.float64(0.5),
            "b": np.int64(3),
            "c": np.array([1.0, float("nan")]),
            "d": np.bool_(True),
            "e": (1, 2),
        })
        assert payload == {"a": 0.5, "b": 3, "c": [1.0, None], "d": True, "e": [1, 2]}

    def test_manifest_is_sorted_and_versioned(self, tmp_path):
        records.write_manifest(str(tmp_path), {"zeta": 1, "alpha": 2})
        text = (tmp_path / "manifest.json").read_text()
        assert text.index('"alpha"') < text.index('"zeta"')
        manifest = records.read_manifest(str(tmp_path))
        assert manifest["schema_version"] == records.SCHEMA_VERSION
        assert json.loads(text) == manifest
