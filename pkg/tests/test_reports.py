import json
import math
from pathlib import Path

import numpy as np
import pytest

from quasiergodic import __version__
from quasiergodic.errors import NotConverged
from quasiergodic.reports import (
    SCHEMA_VERSION,
    Report,
    dumps,
    format_float,
    read_json,
    read_series_csv,
    write_json,
    write_series_csv,
)


def test_sentinels_and_precision():
    assert format_float(math.inf) == '"+inf"'
    assert format_float(-math.inf) == '"-inf"'
    assert format_float(math.nan) == '"nan"'
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(3.0) == "3.0"


def test_dumps_is_deterministic_and_sorted():
    payload = {"b": np.array([1.0, 2.5]), "a": {"z": np.float64(0.5), "y": (1, 2)}, "c": -math.inf}
    text = dumps(payload)
    assert text == dumps(dict(reversed(list(payload.items()))))
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    data = json.loads(text)
    assert data["c"] == "-inf"
    assert data["b"] == [1.0, 2.5]


def test_json_round_trip_restores_sentinels(tmp_path):
    path = write_json(tmp_path / "out" / "values.json", {"immanence": math.inf, "delta_hat": -math.inf, "ok": True})
    data = read_json(path)
    assert data["immanence"] == math.inf
    assert data["delta_hat"] == -math.inf
    assert data["ok"] is True


def test_unserialisable_values_raise():
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_series_csv(tmp_path):
    path = write_series_csv(tmp_path / "series.csv", {"t": [0.0, 0.5], "separation": [1e-8, 2.5]}, {"system": "lorenz"})
    lines = path.read_text().splitlines()
    assert lines[0] == "#system,lorenz"
    assert lines[1] == "t,separation"
    header, columns = read_series_csv(path)
    assert header == {"system": "lorenz"}
    assert np.array_equal(columns["separation"], [1e-8, 2.5])


def test_series_columns_must_match(tmp_path):
    with pytest.raises(ValueError):
        write_series_csv(tmp_path / "bad.csv", {"t": [0.0, 1.0], "x": [1.0]})


class TestReport:
    def setup_method(self):
        self.report = Report("classify", {"system": {"name": "harmonic_oscillator"}})

    def test_complete_report(self, tmp_path):
        artifact = tmp_path / "closures" / "c.csv"
        artifact.parent.mkdir()
        artifact.write_text("")
        self.report.add_artifact(artifact, "point_cloud", tmp_path)
        self.report.results = {"score": -math.inf}
        path = self.report.write(tmp_path)
        assert path == tmp_path / "report.json"
        data = read_json(path)
        assert data["schema_version"] == SCHEMA_VERSION
        assert data["tool_version"] == __version__
        assert data["partial"] is False
        assert data["results"]["score"] == -math.inf
        assert data["manifest"]["artifacts"] == [{"path": "closures/c.csv", "kind": "point_cloud"}]

    def test_failures_mark_partial(self, tmp_path):
        self.report.record_failure("coherence", NotConverged("closure did not saturate"))
        self.report.flag("tension")
        data = read_json(self.report.write(tmp_path))
        assert data["partial"] is True
        assert data["manifest"]["failures"] == [
            {"step": "coherence", "error": "NotConverged", "message": "closure did not saturate"}
        ]
        assert data["flags"] == ["tension"]

    def test_paths_outside_root_stay_absolute(self, tmp_path):
        elsewhere = Path("/tmp/elsewhere.csv")
        self.report.add_artifact(elsewhere, "series", tmp_path)
        assert self.report.artifacts[0]["path"] == "/tmp/elsewhere.csv"
