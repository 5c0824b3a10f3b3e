import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from uavisac.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, main
from uavisac.crb import crb_sum
from uavisac.scenario import Scenario


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def optimized(tmp_path_factory):
    out = tmp_path_factory.mktemp("opt")
    assert main(["optimize", "--e-tot-kj", "20", "--out", str(out)]) == EXIT_OK
    return out


def test_optimize_outputs(optimized):
    traj = _rows(optimized / "trajectory.csv")
    hovers = [r for r in traj if r["is_hover"] == "1"]
    summary = json.loads((optimized / "summary.json").read_text())
    assert summary["n_waypoints"] == len(traj)
    assert summary["n_hovers"] == sum(int(r["hover_count"]) for r in hovers)
    assert all(int(r["hover_count"]) >= 1 for r in hovers)
    trace = _rows(optimized / "trace.csv")
    assert {r["stage"] for r in trace} == {str(s) for s in range(1, len(summary["stages"]) + 1)}
    manifest = json.loads((optimized / "manifest.json").read_text())
    assert manifest["command"] == "optimize"
    assert "trajectory.csv" in manifest["files"]


def test_optimize_is_byte_reproducible(optimized, tmp_path):
    assert main(["optimize", "--e-tot-kj", "20", "--out", str(tmp_path)]) == EXIT_OK
    for name in ("trajectory.csv", "trace.csv", "summary.json", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (optimized / name).read_bytes()


def test_crb_map_grid(tmp_path):
    hov = "450,450; 1050,450; 450,1050; 1050,1050"
    assert main(["crb-map", "--hovers", hov, "--resolution", "100", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["crb-map", "--hovers", hov, "--resolution", "50", "--out", str(tmp_path / "b")]) == EXIT_OK
    coarse = _rows(tmp_path / "a" / "crb_map.csv")
    fine = _rows(tmp_path / "b" / "crb_map.csv")
    assert len(fine) == 4 * len(coarse) == 900
    grid = {(float(r["x"]), float(r["y"])): float(r["crb_sum"]) for r in coarse}
    # the hover square is symmetric about the area centre
    for (x, y), v in grid.items():
        assert grid[(1500 - x, y)] == pytest.approx(v, rel=1e-9)
        assert grid[(y, x)] == pytest.approx(v, rel=1e-9)
    # nearer the hovers beats the centre, so the minimum sits on four mirrored cells
    low = min(grid.values())
    best = {k for k, v in grid.items() if v <= low * (1 + 1e-9)}
    assert best == {(650.0, 650.0), (850.0, 650.0), (650.0, 850.0), (850.0, 850.0)}
    pts = np.array([[450, 450], [1050, 450], [450, 1050], [1050, 1050]], dtype=float)
    assert grid[(750.0, 750.0)] == pytest.approx(crb_sum(pts, (750.0, 750.0), Scenario()).crb_sum, rel=1e-9)


def test_crb_map_from_trajectory(optimized, tmp_path):
    assert main(["crb-map", "--hovers", str(optimized / "trajectory.csv"), "--resolution", "300", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "crb_map.csv")
    assert len(rows) == 25
    assert all(float(r["crb_sum"]) > 0 for r in rows)


def test_sweep_eta_orders_metrics(tmp_path):
    args = ["sweep", "--axis", "eta", "--values", "0,1", "--e-tot-kj", "15", "--runs", "2", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    rows = {float(r["value"]): r for r in _rows(tmp_path / "sweep.csv")}
    assert float(rows[1.0]["crb"]) <= float(rows[0.0]["crb"])
    assert float(rows[0.0]["avg_rate"]) >= float(rows[1.0]["avg_rate"])


def test_simulate(tmp_path):
    assert main(["simulate", "--e-tot-kj", "15", "--runs", "3", "--out", str(tmp_path)]) == EXIT_OK
    runs = _rows(tmp_path / "runs.csv")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(runs) == 3
    assert summary["mse"] == pytest.approx(np.mean([float(r["error_sq"]) for r in runs]))


@pytest.mark.parametrize(
    "argv, code",
    [
        (["sweep", "--axis", "eta", "--values", ""], EXIT_USAGE),
        (["sweep", "--axis", "speed", "--values", "1"], EXIT_USAGE),
        (["optimize", "--eta", "3"], EXIT_USAGE),
        (["optimize", "--e-tot-kj", "0.1"], EXIT_INFEASIBLE),
        (["frobnicate"], EXIT_USAGE),
    ],
)
def test_exit_codes(tmp_path, argv, code):
    if argv[0] != "frobnicate":
        argv = argv + ["--out", str(tmp_path)]
    assert main(argv) == code


def test_missing_config_is_usage_error(tmp_path):
    assert main(["optimize", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "uavisac", "--version"], capture_output=True, text=True)
    assert done.returncode == 0
    assert "uavisac" in done.stdout
