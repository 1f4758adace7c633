"""Link budgets and per-slot achievable rates for the RIS and FDR payloads.

Both hops are free-space LoS links with path-loss exponent 2. The RIS
reflects coherently (array gain M^2) and suffers the product of the two
path losses; the FDR decodes and forwards, so its end-to-end SNR is the
weaker of the two hops, with the first hop degraded by residual
self-interference from its own transmitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinkGeometry:
    d1_m: float  # ground node -> UAV
    d2_m: float  # UAV -> base station


@dataclass(frozen=True)
class SlotRate:
    rate_bps: float
    snr_rx: float
    in_outage: bool
    p_u_w: float


def free_space_const(radio):
    """Path gain at the reference distance, (lambda / 4 pi)^2."""
    return (radio.wavelength_m / (4.0 * math.pi)) ** 2


def ris_gain_const(radio, m_elements):
    """SNR numerator of the RIS link: gamma_t G C0^2 d0^4 M^2."""
    c0 = free_space_const(radio)
    g = radio.antenna_gain_tx * radio.antenna_gain_rx
    return radio.tx_snr * g * c0**2 * radio.ref_distance_m**4 * float(m_elements) ** 2


def ris_rx_snr(geom, radio, m_elements):
    d1 = np.asarray(geom.d1_m, dtype=float)
    d2 = np.asarray(geom.d2_m, dtype=float)
    return ris_gain_const(radio, m_elements) / (d1 * d2) ** 2


def fdr_hop_consts(radio, payload, p_u_w):
    """Distance-free numerators of the two FDR hop SNRs, so that gamma_i = A_i / d_i^2."""
    c0d0 = free_space_const(radio) * radio.ref_distance_m**2
    p_u = np.asarray(p_u_w, dtype=float)
    a1 = (radio.tx_power_w * c0d0 * radio.antenna_gain_tx * payload.ant_rx
          / (payload.ant_tx * radio.antenna_gain_rx * p_u * radio.sic_coeff + radio.noise_power_w))
    a2 = payload.ant_tx * radio.antenna_gain_rx * p_u * c0d0 / radio.noise_power_w
    return a1, a2


def fdr_snrs(geom, radio, payload, p_u_w):
    """SNRs (gamma_1, gamma_2) of the GN->FDR and FDR->BS hops."""
    a1, a2 = fdr_hop_consts(radio, payload, p_u_w)
    d1 = np.asarray(geom.d1_m, dtype=float)
    d2 = np.asarray(geom.d2_m, dtype=float)
    return a1 / d1**2, a2 / d2**2


def balanced_relay_power(geom, radio, payload):
    """Unclamped relay power at which both hop SNRs are equal.

    This is the positive root of the quadratic obtained from gamma_1 =
    gamma_2, written in the cancellation-free form 2c / (b + sqrt(b^2 +
    4ac)).
    """
    d1 = np.asarray(geom.d1_m, dtype=float)
    d2 = np.asarray(geom.d2_m, dtype=float)
    s2 = radio.noise_power_w
    a = radio.sic_coeff * d1**2
    b = s2 * d1**2
    c = radio.tx_power_w * radio.antenna_gain_tx * payload.ant_rx * d2**2 * s2
    x = 2.0 * c / (b + np.sqrt(b * b + 4.0 * a * c))
    return x / (payload.ant_tx * radio.antenna_gain_rx)


def optimal_relay_power(geom, radio, payload):
    """Max-min relay power, clamped to the payload's peak transmit power."""
    p = np.minimum(balanced_relay_power(geom, radio, payload), payload.max_tx_power_w)
    return float(p) if np.ndim(p) == 0 else p


def link_geometry(scenario, uav_xy, gn_index=None):
    """Distances from ground node(s) to the UAV and from the UAV to the BS.

    ``uav_xy`` may be a single point or an (N, 2) array. With ``gn_index``
    None the result covers every node and has shape (K, N).
    """
    q = np.atleast_2d(np.asarray(uav_xy, dtype=float))
    h_u = scenario.airframe.altitude_m
    gn = scenario.gn_xy if gn_index is None else scenario.gn_xy[[gn_index]]
    d1 = np.sqrt(((q[None, :, :] - gn[:, None, :]) ** 2).sum(-1) + h_u**2)
    d2 = np.sqrt(((q - scenario.bs_xy) ** 2).sum(-1) + (h_u - scenario.bs_height_m) ** 2)
    return LinkGeometry(d1, np.broadcast_to(d2, d1.shape))


def snr_and_power(scenario, geom):
    """End-to-end receive SNR and relay power used, elementwise over ``geom``."""
    payload = scenario.payload
    if payload.kind == "ris":
        snr = ris_rx_snr(geom, scenario.radio, payload.m_elements)
        return snr, np.zeros_like(snr)
    p_u = np.asarray(optimal_relay_power(geom, scenario.radio, payload), dtype=float)
    g1, g2 = fdr_snrs(geom, scenario.radio, payload, p_u)
    return np.minimum(g1, g2), p_u


def thresholded_rate(scenario, snr):
    """B log2(1 + snr), or 0 where snr is below the outage threshold."""
    snr = np.asarray(snr, dtype=float)
    rate = scenario.radio.bandwidth_hz * np.log2(1.0 + snr)
    return np.where(snr < scenario.radio.snr_threshold, 0.0, rate)


def rate_table(scenario, uav_xy):
    """Rates, SNRs and relay powers for every (node, slot) pair, each (K, N)."""
    geom = link_geometry(scenario, uav_xy)
    snr, p_u = snr_and_power(scenario, geom)
    return thresholded_rate(scenario, snr), snr, p_u


def slot_rate(scenario, uav_xy, gn_index):
    if not 0 <= gn_index < scenario.k:
        raise IndexError(f"ground node index {gn_index} out of range for K = {scenario.k}")
    geom = link_geometry(scenario, uav_xy, gn_index)
    snr, p_u = snr_and_power(scenario, geom)
    snr = float(snr.ravel()[0])
    rate = float(thresholded_rate(scenario, snr))
    return SlotRate(
        rate_bps=rate,
        snr_rx=snr,
        in_outage=snr < scenario.radio.snr_threshold,
        p_u_w=float(np.ravel(p_u)[0]),
    )
