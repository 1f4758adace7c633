"""Per-slot UAV power model and battery budgeting.

Total slot power is thrust + communication equipment + navigation link.
Thrust power is a quadratic fit in the effective lifted weight, where a
flying UAV "weighs" more in proportion to its speed::

    W[n] = U_w + D_w + R_w + (T_max - U_w - D_w - R_w) * v[n] / v_max
    P_th = C1 W^2 + C2 W + C3

Weights are in kg (the motor fits are expressed in kg), powers in W and
energies in J.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import accumulate

import numpy as np

_SPEED_RTOL = 1e-9


class EnergyModelError(ValueError):
    """A speed or weight falls outside the physical domain of the model."""


@dataclass(frozen=True)
class WeightBreakdown:
    uav_kg: float
    drag_kg: float
    payload_kg: float
    speed_surcharge_kg: float

    @property
    def total_kg(self):
        return self.uav_kg + self.drag_kg + self.payload_kg + self.speed_surcharge_kg


@dataclass(frozen=True)
class EnergyProfile:
    per_slot_w: np.ndarray
    cumulative_j: np.ndarray
    budget_j: float

    @property
    def total_j(self):
        return float(self.cumulative_j[-1]) if len(self.cumulative_j) else 0.0

    @property
    def feasible(self):
        return self.total_j <= self.budget_j

    @property
    def slack_j(self):
        return self.budget_j - self.total_j


def drag_weight(airframe):
    a = airframe
    return a.air_density * a.wind_speed_mps**2 * a.drag_coeff * a.frame_area_m2 / (2.0 * a.gravity)


def payload_weight(payload):
    if payload.kind == "ris":
        return payload.m_elements * payload.element_weight_kg
    return payload.n_antennas * payload.antenna_weight_kg


def thrust_headroom(airframe, payload_kg):
    """Thrust left over at hover: T_max - U_w - D_w - R_w (kg)."""
    return airframe.max_thrust_kg - airframe.uav_weight_kg - drag_weight(airframe) - payload_kg


def speed_surcharge(airframe, payload_kg, speed_mps):
    v = np.asarray(speed_mps, dtype=float)
    if np.any(v < 0):
        raise EnergyModelError("speed must be nonnegative")
    if np.any(v > airframe.max_speed_mps * (1 + _SPEED_RTOL)):
        raise EnergyModelError(
            f"speed {float(np.max(v)):.6g} m/s exceeds v_max = {airframe.max_speed_mps:.6g} m/s"
        )
    out = thrust_headroom(airframe, payload_kg) * np.minimum(v, airframe.max_speed_mps) / airframe.max_speed_mps
    return float(out) if out.ndim == 0 else out


def weight_breakdown(scenario, speed_mps):
    a = scenario.airframe
    rw = payload_weight(scenario.payload)
    return WeightBreakdown(
        uav_kg=a.uav_weight_kg,
        drag_kg=drag_weight(a),
        payload_kg=rw,
        speed_surcharge_kg=speed_surcharge(a, rw, speed_mps),
    )


def thrust_power(airframe, total_weight_kg):
    w = np.asarray(total_weight_kg, dtype=float)
    if np.any(w > airframe.max_thrust_kg * (1 + 1e-12)):
        raise EnergyModelError("lifted weight exceeds the maximum achievable thrust")
    c1, c2, c3 = airframe.motor_coeffs
    out = c1 * w**2 + c2 * w + c3
    return float(out) if out.ndim == 0 else out


def comms_power(payload, p_u_w=0.0):
    """Power drawn by the RIS (elements + controller) or the FDR (PA + transceivers)."""
    if payload.kind == "ris":
        return payload.m_elements * payload.per_element_power_w + payload.controller_power_w
    p = np.asarray(p_u_w, dtype=float)
    out = p * (1.0 + payload.amp_drain_inv) + payload.n_antennas * payload.transceiver_power_w
    return float(out) if out.ndim == 0 else out


def planning_relay_power(scenario):
    """Relay transmit power charged when budgeting: P_max for an FDR, 0 for an RIS."""
    return 0.0 if scenario.payload.kind == "ris" else scenario.payload.max_tx_power_w


def slot_power(scenario, speed_mps, p_u_w=0.0):
    a = scenario.airframe
    rw = payload_weight(scenario.payload)
    w = a.uav_weight_kg + drag_weight(a) + rw + speed_surcharge(a, rw, speed_mps)
    return thrust_power(a, w) + comms_power(scenario.payload, p_u_w) + a.nav_power_w


def energy_profile(scenario, speeds_mps, p_u_w=0.0):
    """Per-slot power and running energy for a speed profile.

    The running sum is accumulated strictly left to right.
    """
    speeds = np.asarray(speeds_mps, dtype=float)
    p_u = np.broadcast_to(np.asarray(p_u_w, dtype=float), speeds.shape)
    per_slot = np.asarray(slot_power(scenario, speeds, p_u), dtype=float).reshape(speeds.shape)
    dt = scenario.airframe.slot_seconds
    cumulative = np.fromiter(accumulate(float(p) * dt for p in per_slot), dtype=float, count=len(per_slot))
    return EnergyProfile(per_slot_w=per_slot, cumulative_j=cumulative, budget_j=scenario.airframe.battery_j)


def slot_budget(scenario, speed_profile, p_u_w=None):
    """Flight duration in slots for a speed profile, N = floor(B_c / (P_avg * dt)).

    ``p_u_w`` defaults to the planning relay power (P_max for an FDR).
    """
    speeds = np.asarray(speed_profile, dtype=float)
    if speeds.size == 0:
        raise ValueError("speed profile must be nonempty")
    if p_u_w is None:
        p_u_w = planning_relay_power(scenario)
    profile = energy_profile(scenario, speeds, p_u_w)
    mean_power = float(np.mean(profile.per_slot_w))
    n = math.floor(scenario.airframe.battery_j / (mean_power * scenario.airframe.slot_seconds))
    return n, profile


def n_max(scenario):
    """Slots available when hovering for the whole flight."""
    return slot_budget(scenario, [0.0])[0]


def n_min(scenario):
    """Slots available when flying at v_max for the whole flight."""
    return slot_budget(scenario, [scenario.airframe.max_speed_mps])[0]
