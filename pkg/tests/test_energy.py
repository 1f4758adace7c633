import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavnet import energy
from uavnet.energy import EnergyModelError

from conftest import make_scenario

# hand evaluation: D_w = 1.225 * 2.5^2 * 0.005 * 0.25 / (2 * 9.8)
DRAG_KG = 4.8828125e-4
FDR_HOVER_W = 3.25 + DRAG_KG + 12 * 8e-3
RIS_HOVER_W = 3.25 + DRAG_KG + 1000 * 3.43e-3


def test_drag_weight(ris):
    assert energy.drag_weight(ris.airframe) == pytest.approx(DRAG_KG, rel=1e-12)
    assert energy.drag_weight(ris.airframe) == pytest.approx(4.883e-4, abs=1e-7)
    still = ris.with_airframe(wind_speed_mps=0.0).airframe
    assert energy.drag_weight(still) == 0.0
    gust = ris.with_airframe(wind_speed_mps=5.0).airframe
    assert energy.drag_weight(gust) == pytest.approx(4 * DRAG_KG)


def test_payload_weight(ris, fdr):
    assert energy.payload_weight(ris.payload) == pytest.approx(3.43)
    assert energy.payload_weight(fdr.payload) == pytest.approx(0.096)


def test_speed_surcharge(fdr):
    a, rw = fdr.airframe, energy.payload_weight(fdr.payload)
    assert energy.speed_surcharge(a, rw, 0.0) == 0.0
    assert energy.speed_surcharge(a, rw, a.max_speed_mps) == pytest.approx(17 - FDR_HOVER_W, rel=1e-12)
    assert energy.speed_surcharge(a, rw, a.max_speed_mps / 2) == pytest.approx(6.826755859375, rel=1e-12)
    with pytest.raises(EnergyModelError):
        energy.speed_surcharge(a, rw, a.max_speed_mps * 1.01)
    with pytest.raises(EnergyModelError):
        energy.speed_surcharge(a, rw, -0.1)


def test_thrust_power_values(ris, fdr):
    p_fdr = energy.thrust_power(fdr.airframe, FDR_HOVER_W)
    assert p_fdr == pytest.approx(10.5 * FDR_HOVER_W**2 - 46 * FDR_HOVER_W + 744, rel=1e-12)
    assert p_fdr == pytest.approx(707.651, abs=1e-3)
    p_ris = energy.thrust_power(ris.airframe, RIS_HOVER_W)
    assert p_ris == pytest.approx(731.838, abs=1e-3)
    assert energy.thrust_power(ris.airframe, 0.0) == pytest.approx(-21.2)
    with pytest.raises(EnergyModelError):
        energy.thrust_power(ris.airframe, 17.5)


def test_comms_power(ris, fdr):
    assert energy.comms_power(ris.payload) == pytest.approx(0.052)
    assert energy.comms_power(ris.payload, 1.0) == energy.comms_power(ris.payload, 0.0)
    assert energy.comms_power(fdr.payload, 1e-3) == pytest.approx(18.002875)
    assert energy.comms_power(fdr.payload, 0.0) == 12 * 1.5


def test_slot_power_values(ris, fdr):
    assert energy.slot_power(fdr, 0.0, 1e-3) == pytest.approx(725.654, abs=1e-3)
    assert energy.slot_power(ris, 0.0) == pytest.approx(731.890, abs=1e-3)
    for sc in (ris, fdr):
        assert energy.slot_power(sc, sc.airframe.max_speed_mps, 1e-3) > energy.slot_power(sc, 0.0, 1e-3)


def test_slot_budget(ris, fdr):
    assert energy.n_max(fdr) == 223 == math.floor(162000 / 725.6537441362)
    assert energy.n_min(fdr) == 53
    assert energy.n_max(ris) == 221
    assert energy.n_min(ris) == 62
    half = fdr.with_airframe(battery_wh=22.5)
    assert abs(energy.n_max(half) - 223 / 2) <= 1
    n, prof = energy.slot_budget(fdr, [0.0, 0.0, 0.0])
    assert n == 223 and prof.per_slot_w.shape == (3,)


def test_profile_cumulative_left_to_right(fdr):
    v = np.random.default_rng(0).uniform(0, fdr.airframe.max_speed_mps, 300)
    prof = energy.energy_profile(fdr, v, 1e-3)
    acc, out = 0.0, []
    for p in prof.per_slot_w:
        acc += float(p) * fdr.airframe.slot_seconds
        out.append(acc)
    assert prof.cumulative_j.tolist() == out
    assert prof.feasible == (prof.total_j <= 162000.0)


def test_weight_breakdown_sum(ris):
    wb = energy.weight_breakdown(ris, 5.0)
    assert wb.total_kg == pytest.approx(wb.uav_kg + wb.drag_kg + wb.payload_kg + wb.speed_surcharge_kg)
    assert 0 <= wb.speed_surcharge_kg <= 17 - RIS_HOVER_W


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["ris", "fdr"]), st.floats(0, 1), st.floats(0, 1))
def test_slot_power_convex_in_speed(kind, a, b):
    sc = make_scenario(kind)
    vm = sc.airframe.max_speed_mps
    va, vb = a * vm, b * vm
    mid = energy.slot_power(sc, 0.5 * (va + vb))
    assert mid <= 0.5 * (energy.slot_power(sc, va) + energy.slot_power(sc, vb)) + 1e-9


@pytest.mark.parametrize("kind,field,values", [
    ("ris", "m_elements", [200, 600, 1000, 1400, 1600]),
    ("fdr", "ant_rx", [1, 2, 3, 4, 5, 6]),
])
def test_n_max_nonincreasing_in_payload(kind, field, values):
    base = make_scenario(kind)
    ns = []
    for v in values:
        changes = {field: v} if kind == "ris" else {"ant_rx": v, "ant_tx": v}
        ns.append(energy.n_max(base.with_payload(**changes)))
    assert all(a >= b for a, b in zip(ns, ns[1:]))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["ris", "fdr"]), st.floats(5.0, 100.0))
def test_n_min_below_n_max(kind, wh):
    sc = make_scenario(kind, airframe__battery_wh=wh)
    assert energy.n_min(sc) <= energy.n_max(sc)
