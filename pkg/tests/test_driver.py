import json

import numpy as np
import pytest

from uavnet import energy
from uavnet.driver import (
    AoSettings,
    alternate,
    evaluate_pair,
    initial_plan,
    n_candidates,
    n_upper_bound,
    reach_radius,
    run_algorithm1,
    run_benchmark,
)
from uavnet.schedule import IDLE, Schedule, benchmark_schedule, build_rate_matrix, solve_maxmin_schedule
from uavnet.trajectory import TrajectoryPlan, benchmark_trajectory, check_plan, hover_plan

from conftest import make_scenario


def small(kind="ris", seed=2, **kw):
    return make_scenario(kind, seed=seed, airframe__battery_wh=8, **kw)


def test_evaluate_pair_basics(ris):
    plan = hover_plan(ris, 20)
    r, per_gn, ok = evaluate_pair(ris, plan, Schedule(np.full(20, IDLE)))
    assert r == 0.0 and ok and len(per_gn) == ris.k
    with pytest.raises(ValueError):
        evaluate_pair(ris, plan, Schedule(np.zeros(19, dtype=int)))
    long = hover_plan(ris, energy.n_max(ris) + 5)
    _, _, ok = evaluate_pair(ris, long, benchmark_schedule(ris, long))
    assert not ok


def test_evaluate_pair_matches_schedule_solver():
    sc = make_scenario("ris", seed=3)
    plan = hover_plan(sc, 60)
    res = solve_maxmin_schedule(build_rate_matrix(sc, plan))
    r, per_gn, ok = evaluate_pair(sc, plan, res.schedule)
    assert ok
    assert r == pytest.approx(res.r_min, rel=1e-4)
    # independent accumulation of the per-node totals
    rates = build_rate_matrix(sc, plan).rates
    manual = [sum(rates[k, n] for n in range(60) if res.schedule.assign[n] == k) for k in range(sc.k)]
    np.testing.assert_allclose(per_gn, manual, rtol=1e-12)


def test_fdr_idle_slots_charge_no_relay_power():
    sc = small("fdr")
    plan = hover_plan(sc, 30)
    idle = Schedule(np.full(30, IDLE))
    busy = benchmark_schedule(sc, plan)
    from uavnet.driver import slot_relay_power
    assert np.all(slot_relay_power(sc, plan, idle) == 0)
    p = slot_relay_power(sc, plan, busy)
    assert np.all(p[busy.assign >= 0] > 0)
    assert np.all(p <= sc.payload.max_tx_power_w)


def test_candidate_grid(ris):
    grid = n_candidates(ris)
    assert grid[0] == energy.n_max(ris) == 221
    assert grid[-1] == energy.n_min(ris) == 62
    assert len(grid) == 9 and grid == sorted(grid, reverse=True)
    full = n_candidates(ris, full=True)
    assert full == list(range(221, 61, -1))


def test_reach_radius_bounds_real_tours():
    sc = small("ris")
    n = 25
    rad = reach_radius(sc, n)
    assert rad > 0
    # the largest circle tour that fits never strays beyond the reach radius
    from uavnet.trajectory import max_feasible_scale
    scale = max_feasible_scale("circle", sc, n)
    plan = benchmark_trajectory("circle", sc, n, scale)
    assert np.max(np.hypot(*plan.xy.T)) <= rad
    assert reach_radius(sc, energy.n_max(sc) + 1) < 0


def test_upper_bound_dominates_algorithm():
    sc = small("ris")
    rep = run_algorithm1(sc, n_values=[25], iter1=3, iter2=5)
    assert rep.best_r_min <= n_upper_bound(sc, 25, np.zeros(2)) * (1 + 1e-12)


def test_initial_plan_kinds():
    sc = make_scenario("ris")
    plan, used = initial_plan(sc, 200, "auto")
    assert used in ("circle", "rhombus", "spiral", "hover")
    assert check_plan(sc, plan).ok
    plan, used = initial_plan(sc, 200, "circle")
    assert used.startswith("circle@") and check_plan(sc, plan).ok
    plan, used = initial_plan(sc, 200, "hover", start="bs")
    assert used == "hover" and np.all(plan.xy == 0)
    with pytest.raises(ValueError):
        initial_plan(sc, 200, "zigzag")


@pytest.mark.parametrize("kind,noise", [("ris", -144), ("fdr", -114)])
def test_algorithm1_contract(kind, noise):
    sc = small(kind, radio__noise_power_dbm=noise)
    rep = run_algorithm1(sc, iter1=4, iter2=6)
    assert rep.status == "ok"
    r, per_gn, ok = evaluate_pair(sc, rep.plan, rep.schedule)
    assert ok and r == rep.best_r_min
    assert check_plan(sc, rep.plan).ok
    hist = [v for _, v in rep.ao_history]
    assert all(b >= a * (1 - 1e-6) for a, b in zip(hist, hist[1:]))
    steps = [v for _, _, v in rep.step_history]
    assert all(b >= a * (1 - 1e-6) for a, b in zip(steps, steps[1:]))
    # benchmark TDMA on a benchmark tour of the same length is a feasible point
    bench = run_benchmark(sc, n_values=[rep.best_n])
    assert rep.best_r_min >= bench.r_min
    assert rep.energy_profile.total_j <= sc.airframe.battery_j + 1e-6


def test_algorithm1_deterministic():
    sc = small("fdr", radio__noise_power_dbm=-114)
    a = json.loads(run_algorithm1(sc, iter1=2, iter2=4).to_json())
    b = json.loads(run_algorithm1(sc, iter1=2, iter2=4).to_json())
    a.pop("wall_time_s"), b.pop("wall_time_s")
    assert a == b


def test_algorithm1_infeasible_battery():
    sc = make_scenario("ris", airframe__battery_wh=0.5)
    rep = run_algorithm1(sc)
    assert rep.status == "infeasible" and rep.plan is None
    assert json.loads(rep.to_json())["status"] == "infeasible"


def test_report_json(tmp_path):
    sc = small("ris")
    rep = run_algorithm1(sc, n_values=[30, 20], iter1=2, iter2=3)
    rep.to_json(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["best_n"] == rep.best_n
    assert len(doc["trajectory"]["xy_m"]) == rep.best_n
    assert len(doc["gn_xy_m"]) == sc.k and doc["bs_xy_m"] == [0.0, 0.0]
    assert {c["status"] for c in doc["candidates"]} <= {"optimized", "pruned", "infeasible"}


def test_alternate_never_decreases():
    sc = small("fdr", radio__noise_power_dbm=-114)
    plan, _ = initial_plan(sc, 25, "circle")
    run = alternate(sc, plan, AoSettings(iter1=3, iter2=4))
    vals = [v for _, _, v in run.step_history]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_settings_validated():
    with pytest.raises(ValueError):
        AoSettings(iter1=0)
