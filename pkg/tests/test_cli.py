import csv
import json

import numpy as np
import pytest

from uavnet import cli
from uavnet.driver import OptimizationReport, run_algorithm1
from uavnet.scenario import ConfigError, default_config
from uavnet.schedule import benchmark_schedule
from uavnet.trajectory import TrajectoryPlan, hover_plan

from conftest import make_scenario


@pytest.fixture
def small_cfg(tmp_path):
    cfg = default_config("ris")
    cfg["airframe"]["battery_wh"] = 8
    path = tmp_path / "small.json"
    path.write_text(json.dumps(cfg))
    return path


def write_spec(tmp_path, name="spec.json", **doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_sweep_shape_and_determinism(tmp_path, small_cfg):
    spec = write_spec(tmp_path, base_config=small_cfg.name, sweep={"ris_elements": list(range(600, 1601, 200))},
                      mc_iterations=2, seeds=0, mode="benchmark", output_dir=str(tmp_path / "a"))
    assert cli.main(["sweep", "--spec", str(spec), "--threads", "2"]) == 0
    dat = (tmp_path / "a" / "ris_elements.dat").read_bytes()
    rows = cli.read_dat(tmp_path / "a" / "ris_elements.dat")
    assert rows.shape == (6, 3)
    assert rows[:, 0].tolist() == list(range(600, 1601, 200))
    assert b"\r" not in dat
    assert cli.main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "b")]) == 0
    for name in ("ris_elements.dat", "runs.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["total_runs"] == 12 and summary["failed_runs"] == 0
    assert all(p["ok"] == 2 for p in summary["points"])


def test_sweep_aggregates(tmp_path, small_cfg):
    spec = write_spec(tmp_path, base_config=str(small_cfg), sweep={"battery_wh": [6, 8]},
                      mc_iterations=3, seeds=4, mode="benchmark", output_dir=str(tmp_path / "o"))
    assert cli.main(["sweep", "--spec", str(spec)]) == 0
    with open(tmp_path / "o" / "runs.csv") as fh:
        runs = list(csv.DictReader(fh))
    assert [int(r["seed"]) for r in runs] == [4, 5, 6, 4, 5, 6]
    rows = cli.read_dat(tmp_path / "o" / "battery_wh.dat")
    for i, value in enumerate(["6", "8"]):
        r = np.array([float(x["r_min_bits"]) for x in runs if x["sweep_value"] == value])
        assert rows[i, 1] == pytest.approx(r.mean(), rel=1e-5)
        assert rows[i, 2] == pytest.approx(r.std(ddof=1) / np.sqrt(3), rel=1e-5)


def test_algorithm1_dominates_benchmark_per_seed(tmp_path, small_cfg):
    out = {}
    for mode in ("benchmark", "algorithm1"):
        spec = write_spec(tmp_path, f"{mode}.json", base_config=str(small_cfg), sweep={"noise_dbm": [-144]},
                          mc_iterations=2, seeds=0, mode=mode, output_dir=str(tmp_path / mode), iter1=2, iter2=4)
        assert cli.main(["sweep", "--spec", str(spec)]) == 0
        with open(tmp_path / mode / "runs.csv") as fh:
            out[mode] = {r["seed"]: float(r["r_min_bits"]) for r in csv.DictReader(fh)}
    for seed, r in out["benchmark"].items():
        assert out["algorithm1"][seed] >= r


def test_failed_runs_give_partial_status(tmp_path, small_cfg):
    # 1700 elements exceed the frame capacity, so those runs fail and are recorded
    spec = write_spec(tmp_path, base_config=str(small_cfg), sweep={"ris_elements": [800, 1700]},
                      mc_iterations=1, mode="benchmark", output_dir=str(tmp_path / "o"))
    assert cli.main(["sweep", "--spec", str(spec)]) == 2
    with open(tmp_path / "o" / "runs.csv") as fh:
        runs = list(csv.DictReader(fh))
    assert runs[0]["status"] == "ok" and runs[1]["status"].startswith("error: ConfigError")
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["failed_runs"] == 1


@pytest.mark.parametrize("doc,msg", [
    ({"base_config": "ris", "sweep": {}}, "exactly one"),
    ({"base_config": "ris", "sweep": {"ris_elements": []}}, "at least one"),
    ({"base_config": "ris", "sweep": {"ris_elements": [600]}, "mc_iterations": 0}, "mc_iterations"),
    ({"base_config": "ris", "sweep": {"wingspan": [1]}}, "unknown sweep"),
    ({"base_config": "ris", "sweep": {"fdr_antennas": [2]}}, "fdr payload"),
    ({"base_config": "ris", "sweep": {"ris_elements": [600]}, "mode": "fast"}, "mode"),
    ({"base_config": "ris", "sweep": {"ris_elements": [600]}, "colour": 1}, "unknown"),
])
def test_spec_validation(doc, msg):
    with pytest.raises(ConfigError, match=msg):
        cli.spec_from_dict(doc)


def test_config_errors_exit_one(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    bad = write_spec(tmp_path, base_config="ris", sweep={"ris_elements": []})
    assert cli.main(["sweep", "--spec", str(bad)]) == 1
    (tmp_path / "broken.json").write_text("{")
    assert cli.main(["sweep", "--spec", str(tmp_path / "broken.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_apply_sweep_paths():
    cfg = default_config("fdr")
    assert cli.apply_sweep(cfg, "fdr_antennas", 4)["payload"]["antennas"] == 4
    assert cli.apply_sweep(cfg, "field_side", 250)["field_side_m"] == 250
    assert cli.apply_sweep(cfg, "noise_dbm", -114)["radio"]["noise_power_dbm"] == -114
    assert cli.apply_sweep(cfg, "battery_wh", 30)["airframe"]["battery_wh"] == 30
    assert cfg["payload"]["antennas"] == 12


def _report(sc, plan):
    return OptimizationReport(plan.n, 0.0, benchmark_schedule(sc, plan), plan, gn_xy=sc.gn_xy, bs_xy=sc.bs_xy)


def test_figure_data_hover(tmp_path):
    sc = make_scenario("ris")
    plan = hover_plan(sc, 12, point=(123.456789, -0.000123456789))
    assert cli.emit_trajectory_figure_data(_report(sc, plan), tmp_path) == 0
    text = (tmp_path / "traj.dat").read_text()
    lines = text.split("\n")
    assert lines[-1] == "" and len(lines) == 13 and "\r" not in text
    assert lines[0] == "1 123.457 -0.000123457"
    assert len({ln.split(" ", 1)[1] for ln in lines[:-1]}) == 1
    gn = cli.read_dat(tmp_path / "gn.dat")
    assert gn.shape == (10, 3) and gn[:, 0].tolist() == list(range(1, 11))
    assert (tmp_path / "bs.dat").read_text() == "0 0\n"


def test_figure_data_round_trip(tmp_path):
    sc = make_scenario("ris", airframe__battery_wh=8)
    rep = run_algorithm1(sc, n_values=[25], iter1=2, iter2=3)
    cli.emit_trajectory_figure_data(rep, tmp_path)
    rows = cli.read_dat(tmp_path / "traj.dat")
    assert rows[:, 0].tolist() == list(range(1, rep.best_n + 1))
    # six significant digits: within half a unit in the sixth digit
    err = np.abs(rows[:, 1:] - rep.plan.xy)
    assert np.all(err <= 5e-6 * np.abs(rep.plan.xy) + 1e-12)
    assert np.all(err[np.abs(rep.plan.xy) < 100] <= 1e-4)
    np.testing.assert_allclose(cli.read_dat(tmp_path / "gn.dat")[:, 1:], sc.gn_xy, rtol=5e-6)


def test_run_and_bench_commands(tmp_path, small_cfg):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(small_cfg), "--seed", "2", "--out", str(out)]) == 0
    for name in ("report.json", "trajectory.csv", "traj.dat", "gn.dat", "bs.dat"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    plan = TrajectoryPlan.from_csv(out / "trajectory.csv", 100.0)
    assert plan.n == rep["best_n"]
    np.testing.assert_array_equal(plan.xy, np.array(rep["trajectory"]["xy_m"]))
    assert cli.main(["bench", "--config", str(small_cfg), "--out", str(tmp_path / "b")]) == 0
    lines = (tmp_path / "b" / "bench.dat").read_text().splitlines()
    assert [ln.split()[0] for ln in lines] == ["circle", "rhombus", "spiral"]
    assert cli.main(["bench", "--out", str(tmp_path / "c")]) == 1
