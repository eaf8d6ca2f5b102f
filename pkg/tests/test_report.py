"""Report export: JSON fidelity, scatter CSVs, rendered figure files."""

import csv
import json

import numpy as np
import pytest

from blindrir.report import (
    export_report,
    write_metrics_json,
    write_pair_figures,
    write_scatter_csv,
)


def test_metrics_json_roundtrip_exact(tmp_path):
    report = {
        "rt60": {"rho": 0.987654321012345, "mse": 1.25e-3, "flags": []},
        "n_pairs": 7,
        "note": "unicode ok: ρ",
        "nested": {"values": [1.5, 2.25, None]},
    }
    path = write_metrics_json(report, tmp_path)
    assert path.name == "metrics.json"
    back = json.loads(path.read_text())
    assert back == report
    assert path.read_text().endswith("\n")


def test_scatter_csv_full_precision(tmp_path):
    rng = np.random.default_rng(0)
    true = rng.standard_normal(20)
    est = rng.standard_normal(20)
    path = write_scatter_csv("rt60", true, est, tmp_path)
    assert path.name == "scatter_rt60.csv"
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["true", "estimated"]
    assert len(rows) == 21
    # repr() roundtrips float64 exactly
    for row, t, e in zip(rows[1:], true, est):
        assert float(row[0]) == t
        assert float(row[1]) == e


def test_scatter_csv_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        write_scatter_csv("x", np.zeros(3), np.zeros(4), tmp_path)


def test_pair_figures_written(tmp_path):
    rng = np.random.default_rng(1)
    h_true = rng.standard_normal(4000) * np.exp(-np.arange(4000) / 1000.0)
    h_est = rng.standard_normal(4000) * np.exp(-np.arange(4000) / 900.0)
    wave, spec = write_pair_figures("pair0", h_true, h_est, tmp_path)
    for path in (wave, spec):
        assert path.exists()
        assert path.stat().st_size > 1000  # a real rendered PNG, not a stub
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert wave.parent.name == "pairs"


def test_export_report_collects_paths(tmp_path):
    rng = np.random.default_rng(2)
    h = rng.standard_normal(2000)
    written = export_report(
        report={"ok": True},
        scatters={"rt60": (np.ones(4), np.ones(4) * 1.1),
                  "volume": (np.ones(4) * 100, np.ones(4) * 90)},
        pairs=[("p0", h, h * 0.5)],
        out_dir=tmp_path / "evalout",
    )
    assert len(written["json"]) == 1
    assert len(written["csv"]) == 2
    assert len(written["png"]) == 2
    for group in written.values():
        for p in group:
            assert (tmp_path / "evalout") in __import__("pathlib").Path(p).parents
