"""UAV trajectories: benchmark tours and SCA trajectory optimization.

A trajectory is a closed tour of N slot positions at fixed altitude. Slot
n >= 1 flies the segment q[n-1] -> q[n] at speed |q[n] - q[n-1]| / dt;
slot 0 is spent at the start point, so a tour of N slots has N - 1
segments and ends where it began.

For a fixed schedule the rate constraints are non-convex in the
positions. Each SCA round replaces the concave side of every log-distance
bound with its tangent at the current iterate, solves the resulting convex
program with the barrier solver and re-anchors at the new positions. The
tangent lies below 2^s, so every round optimizes over an inner
approximation and the round objective cannot decrease.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from . import energy
from .channel import fdr_hop_consts, link_geometry, optimal_relay_power, ris_gain_const
from .convex import ConstraintBlock, ConvexProgram, SolveOptions, exp2_clamped, solve

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
SPEED_SMOOTHING_M = 1e-6
# each round is re-checked exactly, so a long-step barrier with a capped
# inner loop is enough; full centering stalls on long energy-tight tours
SCA_SOLVER = SolveOptions(mu=50.0, max_newton=50, t0=None)
BENCHMARK_KINDS = ("circle", "rhombus", "spiral")


class TrajectoryInfeasible(ValueError):
    """A tour cannot satisfy the speed, energy or coverage limits."""


@dataclass(frozen=True, eq=False)
class TrajectoryPlan:
    xy: np.ndarray
    altitude_m: float
    slot_seconds: float = 1.0

    def __post_init__(self):
        xy = np.array(self.xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2 or len(xy) < 1:
            raise ValueError("xy must be an (N, 2) array with N >= 1")
        xy.flags.writeable = False
        object.__setattr__(self, "xy", xy)

    @property
    def n(self):
        return len(self.xy)

    @property
    def speeds(self):
        """Per-slot speed; slot 0 is spent at the start point."""
        seg = np.hypot(*np.diff(self.xy, axis=0).T) / self.slot_seconds
        return np.concatenate([[0.0], seg])

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "x_m", "y_m"])
        for n, (x, y) in enumerate(self.xy):
            w.writerow([n, repr(float(x)), repr(float(y))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, newline="")
        return text

    @classmethod
    def from_csv(cls, source, altitude_m, slot_seconds=1.0):
        text = Path(source).read_text() if isinstance(source, (str, Path)) and "\n" not in str(source) else source
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["n", "x_m", "y_m"]:
            raise ValueError("trajectory CSV must start with the header n,x_m,y_m")
        body = [r for r in rows[1:] if r]
        idx = [int(r[0]) for r in body]
        if idx != list(range(len(body))):
            raise ValueError("trajectory CSV rows must be numbered 0..N-1 in order")
        xy = np.array([[float(r[1]), float(r[2])] for r in body])
        return cls(xy, altitude_m, slot_seconds)


def hover_plan(scenario, n_slots, point=None):
    p = scenario.bs_xy if point is None else np.asarray(point, dtype=float)
    return TrajectoryPlan(np.tile(p, (n_slots, 1)), scenario.airframe.altitude_m, scenario.airframe.slot_seconds)


# -- independent feasibility check -------------------------------------------


@dataclass
class PlanCheck:
    closed: bool
    speed_ok: bool
    energy_ok: bool
    in_field: bool
    max_speed_mps: float
    energy_j: float
    budget_j: float

    @property
    def ok(self):
        return self.closed and self.speed_ok and self.energy_ok and self.in_field


def check_plan(scenario, plan, p_u_w=None, tol_m=1e-9, tol_j=1e-6):
    """Re-check closure, speed, battery and field limits from the raw positions.

    Energy is charged with ``p_u_w`` per slot (default: the planning relay
    power, P_max for an FDR).
    """
    xy = plan.xy
    a = scenario.airframe
    speeds = plan.speeds
    half = scenario.field_side_m / 2.0
    closed = bool(np.all(np.abs(xy[0] - xy[-1]) <= tol_m))
    vmax = float(np.max(speeds))
    speed_ok = vmax <= a.max_speed_mps * (1 + 1e-9)
    if p_u_w is None:
        p_u_w = energy.planning_relay_power(scenario)
    try:
        prof = energy.energy_profile(scenario, np.minimum(speeds, a.max_speed_mps), p_u_w)
        used = prof.total_j
    except energy.EnergyModelError:
        used = math.inf
    return PlanCheck(
        closed=closed,
        speed_ok=speed_ok,
        energy_ok=used <= a.battery_j + tol_j,
        in_field=bool(np.all(np.abs(xy) <= half + tol_m)),
        max_speed_mps=vmax,
        energy_j=used,
        budget_j=a.battery_j,
    )


# -- benchmark tours ------------------------------------------------------------


def _benchmark_polyline(kind, field_side_m, scale, samples=4096):
    r = scale * field_side_m / 2.0
    out = np.linspace([0.0, 0.0], [r, 0.0], 65)
    if kind == "circle":
        th = np.linspace(0.0, 2 * math.pi, samples + 1)
        loop = np.column_stack([r * np.cos(th), r * np.sin(th)])
        parts = [out, loop[1:], out[::-1][1:]]
    elif kind == "rhombus":
        corners = np.array([[r, 0.0], [0.0, r], [-r, 0.0], [0.0, -r], [r, 0.0]])
        loop = [np.linspace(corners[i], corners[i + 1], 65)[1:] for i in range(4)]
        parts = [out] + loop + [out[::-1][1:]]
    elif kind == "spiral":
        th = np.linspace(0.0, 2 * math.pi, samples + 1)
        rad = scale * field_side_m / (12 * math.pi) * th
        spiral = np.column_stack([rad * np.cos(th), rad * np.sin(th)])
        back = np.linspace(spiral[-1], [0.0, 0.0], 65)[1:]
        parts = [spiral, back]
    else:
        raise ValueError(f"unknown benchmark trajectory {kind!r}")
    pts = np.vstack(parts)
    keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0, axis=1)])
    return pts[keep]


def benchmark_path_length(kind, field_side_m, scale=1.0):
    pts = _benchmark_polyline(kind, field_side_m, scale)
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def benchmark_trajectory(kind, scenario, n_slots, scale=1.0, check_energy=True):
    """Constant-speed tour of a benchmark shape, counter-clockwise from the origin.

    ``scale`` shrinks the shape about the origin (1 = full size). Slot
    positions are spaced evenly in arc length, so the UAV covers the same
    path length in every slot; a slot that cuts a corner has a slightly
    shorter straight-line displacement.
    """
    if n_slots < 2:
        raise TrajectoryInfeasible("a moving tour needs at least 2 slots")
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    a = scenario.airframe
    pts = _benchmark_polyline(kind, scenario.field_side_m, scale)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    length = float(arc[-1])
    speed = length / ((n_slots - 1) * a.slot_seconds)
    if speed > a.max_speed_mps * (1 + 1e-9):
        raise TrajectoryInfeasible(
            f"{kind} at scale {scale:.3g} needs {speed:.3f} m/s over {n_slots} slots (v_max {a.max_speed_mps:.3f})"
        )
    at = np.linspace(0.0, length, n_slots)
    xy = np.column_stack([np.interp(at, arc, pts[:, 0]), np.interp(at, arc, pts[:, 1])])
    xy[0] = xy[-1] = 0.0
    plan = TrajectoryPlan(xy, a.altitude_m, a.slot_seconds)
    if check_energy and not check_plan(scenario, plan).energy_ok:
        raise TrajectoryInfeasible(f"{kind} at scale {scale:.3g} exhausts the battery within {n_slots} slots")
    return plan


def path_speeds(plan, kind, field_side_m, scale=1.0):
    """Per-slot speed measured along the benchmark path rather than straight-line."""
    pts = _benchmark_polyline(kind, field_side_m, scale)
    length = float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))
    return np.concatenate([[0.0], np.full(plan.n - 1, length / ((plan.n - 1) * plan.slot_seconds))])


def max_cruise_speed(scenario, n_slots, p_u_w=None):
    """Largest constant speed for which one hover slot plus N - 1 moving slots fit the battery."""
    a = scenario.airframe
    if p_u_w is None:
        p_u_w = energy.planning_relay_power(scenario)
    budget = a.battery_j / a.slot_seconds

    def excess(v):
        return energy.slot_power(scenario, 0.0, p_u_w) + (n_slots - 1) * energy.slot_power(scenario, v, p_u_w) - budget

    if excess(0.0) > 0:
        return None
    if excess(a.max_speed_mps) <= 0:
        return a.max_speed_mps
    return brentq(excess, 0.0, a.max_speed_mps, xtol=1e-12)


def max_feasible_scale(kind, scenario, n_slots):
    """Largest scale in (0, 1] at which the benchmark tour fits N slots, or None."""
    v = max_cruise_speed(scenario, n_slots)
    if v is None or v <= 0 or n_slots < 2:
        return None
    full = benchmark_path_length(kind, scenario.field_side_m)
    return min(1.0, v * (n_slots - 1) * scenario.airframe.slot_seconds / full * (1 - 1e-9))


# -- SCA ------------------------------------------------------------------------


def tangent_exp2(s, s0):
    """First-order expansion of 2**s about s0: 2**s0 (1 + ln2 (s - s0))."""
    return exp2_clamped(s0) * (1.0 + LN2 * (np.asarray(s, dtype=float) - s0))


@dataclass
class ScaState:
    anchors: dict
    objective_history: list = field(default_factory=list)
    exact_history: list = field(default_factory=list)
    relay_power_w: np.ndarray | None = None
    status: list = field(default_factory=list)


@dataclass
class ScaResult:
    plan: TrajectoryPlan
    r_min: float  # exact bits under the given schedule
    state: ScaState
    rounds: int


class _Layout:
    """Variable layout shared by the RIS and FDR subproblems."""

    def __init__(self, scenario, schedule, init):
        self.scenario = scenario
        self.n = init.n
        if self.n < 3:
            raise TrajectoryInfeasible("trajectory optimization needs at least 3 slots")
        self.start = init.xy[0].copy()
        self.nf = self.n - 2  # free points q[1..N-2]
        assign = np.asarray(schedule.assign)
        if len(assign) != self.n:
            raise ValueError("schedule and trajectory lengths differ")
        self.slots = np.nonzero(assign >= 0)[0]
        self.gn = assign[self.slots]
        self.j = len(self.slots)
        self.free_slot = (self.slots >= 1) & (self.slots <= self.n - 2)
        self.q_index = self.slots - 1  # index into the free block when free_slot
        self.rho = 2 * self.nf

    def positions(self, x):
        q = np.empty((self.n, 2))
        q[0] = q[-1] = self.start
        q[1:-1, 0] = x[: self.nf]
        q[1:-1, 1] = x[self.nf: 2 * self.nf]
        return q

    def pack(self, xy):
        return np.concatenate([xy[1:-1, 0], xy[1:-1, 1]])


def _dist_block(lay, name, var_idx, target_xy, height, coef, const, lin_coef):
    """Constraints coef_j |q[slot_j] - target_j|^2 + coef_j h^2 + lin_coef_j x[var_j] + const_j <= 0.

    Only the squared distance is nonlinear; ``var_idx`` is -1 where there is
    no scalar variable in the row.
    """
    rows = np.arange(lay.j)
    free = lay.free_slot
    qi = lay.q_index
    has_v = var_idx >= 0
    var_safe = np.maximum(var_idx, 0)
    lin = np.where(has_v, lin_coef, 0.0)
    r_jac = np.concatenate([rows[free], rows[free], rows[has_v]])
    c_jac = np.concatenate([qi[free], lay.nf + qi[free], var_idx[has_v]])
    h_idx = np.concatenate([qi[free], lay.nf + qi[free]])

    def diff(x):
        return lay.positions(x)[lay.slots] - target_xy

    def fun(x):
        d = diff(x)
        return coef * ((d**2).sum(1) + height**2) + const + lin * x[var_safe]

    def jac(x):
        d = diff(x)
        v = np.concatenate([2 * coef[free] * d[free, 0], 2 * coef[free] * d[free, 1], lin[has_v]])
        return r_jac, c_jac, v

    def hess(x, w):
        d2 = 2 * coef[free] * w[free]
        return h_idx, h_idx, np.concatenate([d2, d2])

    return ConstraintBlock(name, fun, jac, hess)


def _motion_blocks(lay, v_idx, p_comm_w):
    """Per-segment speed cones and the battery budget.

    Each segment s carries a speed variable v_s with |q[s+1] - q[s]|^2 +
    eps^2 <= (dt v_s)^2; the battery is charged at v_s, so it never
    undercounts the true energy. The log barrier of the cone stays smooth at
    zero displacement, unlike |delta| itself.
    """
    sc = lay.scenario
    a = sc.airframe
    dt = a.slot_seconds
    vmax = a.max_speed_mps
    eps = SPEED_SMOOTHING_M
    lim2 = (vmax * dt) ** 2
    nseg = lay.n - 1
    c1, c2, c3 = a.motor_coeffs
    rw = energy.payload_weight(sc.payload)
    w0 = a.uav_weight_kg + energy.drag_weight(a) + rw
    slope = energy.thrust_headroom(a, rw) / vmax  # kg per m/s
    budget = a.battery_j
    hover = energy.slot_power(sc, 0.0, p_comm_w) * dt  # slot 0 energy

    # segment s joins q[s] and q[s+1]; endpoints 0 and N-1 are pinned
    s_idx = np.arange(nseg)
    left_free = s_idx >= 1
    right_free = s_idx + 1 <= lay.n - 2
    ends = ((1.0, right_free, 0), (-1.0, left_free, -1))

    def deltas(x):
        return np.diff(lay.positions(x), axis=0)

    r, c = [s_idx], [v_idx]
    for _, mask, off in ends:
        qi = s_idx[mask] + off  # q[s+1] -> free index s, q[s] -> free index s-1
        r += [s_idx[mask], s_idx[mask]]
        c += [qi, lay.nf + qi]
    cone_r, cone_c = np.concatenate(r), np.concatenate(c)

    hr, hc, blocks = [], [], []
    for sa, ma, oa in ends:
        for sb, mb, ob in ends:
            m = ma & mb
            for pa in (0, 1):
                # only the xx and yy blocks of D^T D are nonzero
                hr.append(s_idx[m] + oa + pa * lay.nf)
                hc.append(s_idx[m] + ob + pa * lay.nf)
                blocks.append((sa * sb, m))
    cone_hr = np.concatenate(hr + [v_idx])
    cone_hc = np.concatenate(hc + [v_idx])

    def cone_fun(x):
        d = deltas(x)
        return ((d**2).sum(1) + eps**2 - (dt * x[v_idx]) ** 2) / lim2

    def cone_jac(x):
        d = deltas(x)
        vals = [-2 * dt**2 * x[v_idx] / lim2]
        for sign, mask, _ in ends:
            vals += [sign * 2 * d[mask, 0] / lim2, sign * 2 * d[mask, 1] / lim2]
        return cone_r, cone_c, np.concatenate(vals)

    def cone_hess(x, w):
        h = 2 * w / lim2
        vals = [f * h[m] for f, m in blocks] + [-dt**2 * h]
        return cone_hr, cone_hc, np.concatenate(vals)

    zeros = np.zeros(nseg, dtype=int)

    # energy above all-hover, scaled by the hover slack, so the row does not
    # cancel against the full budget when the battery is nearly used up
    hover_total = hover + dt * nseg * (energy.slot_power(sc, 0.0, p_comm_w))
    slack0 = budget - hover_total
    scale = max(slack0, 1e-6 * budget)

    def extra_power(v):
        sv = slope * v
        return sv * (c1 * (2 * w0 + sv) + c2), (2 * c1 * (w0 + sv) + c2) * slope

    def energy_fun(x):
        p, _ = extra_power(x[v_idx])
        return np.array([(dt * float(np.sum(p)) - slack0) / scale])

    def energy_jac(x):
        _, dp = extra_power(x[v_idx])
        return zeros, v_idx, dt * dp / scale

    def energy_hess(x, w):
        return v_idx, v_idx, np.full(nseg, w[0] * dt * 2 * c1 * slope**2 / scale)

    return [
        ConstraintBlock("speed", cone_fun, cone_jac, cone_hess),
        ConstraintBlock("energy", energy_fun, energy_jac, energy_hess, coupling=True),
    ]


def _speed_start(lay, xy, p_comm_w):
    """Speed variables a hair above the true segment speeds, inside the battery slack."""
    sc = lay.scenario
    a = sc.airframe
    dt = a.slot_seconds
    v = np.sqrt((np.diff(xy, axis=0) ** 2).sum(1) + SPEED_SMOOTHING_M**2) / dt
    v = np.minimum(v, a.max_speed_mps * (1 - 1e-12))
    used = energy.slot_power(sc, 0.0, p_comm_w) * dt + dt * float(np.sum(energy.slot_power(sc, v, p_comm_w)))
    h = 1e-6
    rise = dt * float(np.sum(energy.slot_power(sc, np.minimum(v + h, a.max_speed_mps), p_comm_w))) / h
    bump = min(1e-7, max(a.battery_j - used, 0.0) / (2 * rise))
    bump = max(bump, 1e-12)
    return np.minimum(v * (1 + 1e-12) + bump, a.max_speed_mps * (1 - 1e-12))


def _rate_sum_block(lay, n_vars, rate_cols, rate_sign, rate_const):
    """rho - sum_{j in J_k} (rate_const_j + rate_sign * sum_c x[rate_cols[c][j]]) <= 0 per served node."""
    served = np.unique(lay.gn)
    row_of = np.searchsorted(served, lay.gn)
    m = len(served)
    const = np.zeros(m)
    np.add.at(const, row_of, rate_const)
    r = np.concatenate([np.arange(m)] + [row_of for _ in rate_cols])
    c = np.concatenate([np.full(m, lay.rho)] + list(rate_cols))
    v = np.concatenate([np.ones(m)] + [np.full(lay.j, -rate_sign) for _ in rate_cols])
    jac = sp.csr_matrix((v, (r, c)), shape=(m, n_vars))
    trip = (r, c, v)
    return ConstraintBlock("rate_sum", lambda x: jac @ x - const, lambda x: trip, None, coupling=True), served, row_of


def _start_point(lay, xy, extra, speeds):
    return np.concatenate([lay.pack(xy), [0.0], extra, speeds])


def _bounds(lay, n_vars, lo_extra, hi_extra):
    """Field box on positions, given limits on the extras, (0, v_max) on speeds."""
    half = lay.scenario.field_side_m / 2.0
    nseg = lay.n - 1
    lo = np.full(n_vars, -np.inf)
    hi = np.full(n_vars, np.inf)
    lo[: 2 * lay.nf] = -half
    hi[: 2 * lay.nf] = half
    lo[lay.rho + 1: n_vars - nseg] = lo_extra
    hi[lay.rho + 1: n_vars - nseg] = hi_extra
    lo[n_vars - nseg:] = 0.0
    hi[n_vars - nseg:] = lay.scenario.airframe.max_speed_mps
    return lo, hi


def _interior_xy(xy, half):
    """Nudge points on the field edge strictly inside for the barrier."""
    lim = half * (1 - 1e-12)
    return np.clip(xy, -lim, lim)


def _ris_round(lay, xy, opts):
    sc = lay.scenario
    h_u = sc.airframe.altitude_m
    dh = h_u - sc.bs_height_m
    gain = ris_gain_const(sc.radio, sc.payload.m_elements)
    lg = math.log2(gain)
    cap = math.log2(gain / sc.radio.snr_threshold)  # s + t <= cap keeps the SNR above threshold
    geom = link_geometry(sc, xy)
    d1sq = geom.d1_m[lay.gn, lay.slots] ** 2
    d2sq = geom.d2_m[lay.gn, lay.slots] ** 2
    s0 = np.log2(d1sq)
    t0 = np.log2(d2sq)
    j = lay.j
    n_vars = lay.rho + 1 + 2 * j + lay.n - 1
    s_idx = lay.rho + 1 + np.arange(j)
    t_idx = s_idx + j
    bs = np.broadcast_to(sc.bs_xy, (j, 2))
    gn = sc.gn_xy[lay.gn]
    blocks = [
        # |q - gn|^2 + H^2 <= tangent of 2^s at s0, scaled by 2^-s0
        _dist_block(lay, "ris_gn_hop", s_idx, gn, h_u, exp2_clamped(-s0), -1.0 + LN2 * s0,
                    -LN2 * np.ones(j)),
        _dist_block(lay, "ris_bs_hop", t_idx, bs, dh, exp2_clamped(-t0), -1.0 + LN2 * t0,
                    -LN2 * np.ones(j)),
    ]
    rows = np.arange(j)
    thr = (np.concatenate([rows, rows]), np.concatenate([s_idx, t_idx]), np.ones(2 * j))
    blocks.append(ConstraintBlock("snr_threshold", lambda x: x[s_idx] + x[t_idx] - cap, lambda x: thr))
    v_idx = lay.rho + 1 + 2 * j + np.arange(lay.n - 1)
    blocks += _motion_blocks(lay, v_idx, 0.0)
    rate_sum, served, row_of = _rate_sum_block(lay, n_vars, [s_idx, t_idx], -1.0, np.full(j, lg))
    blocks.append(rate_sum)

    # strictly feasible start: positions as given, s and t a hair above their anchors
    slack = np.maximum(cap - s0 - t0, 0.0)
    delta = np.minimum(1e-7, slack / 4)
    s_start, t_start = s0 + delta, t0 + delta
    sums = np.zeros(len(served))
    np.add.at(sums, row_of, lg - s_start - t_start)
    x0 = _start_point(lay, xy, np.concatenate([s_start, t_start]), _speed_start(lay, xy, 0.0))
    x0[lay.rho] = float(np.min(sums)) - 1e-6 * max(1.0, abs(float(np.min(sums))))
    span = math.log2(2 * sc.field_side_m**2 + h_u**2 + 1.0)
    lo_extra = np.concatenate([np.full(j, math.log2(h_u**2) - 1), np.full(j, math.log2(max(dh**2, 1e-6)) - 1)])
    lo_extra = np.minimum(lo_extra, np.concatenate([s0, t0]) - 1)
    lo, hi = _bounds(lay, n_vars, lo_extra, span + 10)
    prog = ConvexProgram(n_vars, _unit(n_vars, lay.rho), blocks, lo, hi)
    return prog, x0, {"s0": s0, "t0": t0}


def _fdr_round(lay, xy, opts):
    sc = lay.scenario
    h_u = sc.airframe.altitude_m
    dh = h_u - sc.bs_height_m
    thr = sc.radio.snr_threshold
    geom = link_geometry(sc, xy)
    d1sq = geom.d1_m[lay.gn, lay.slots] ** 2
    d2sq = geom.d2_m[lay.gn, lay.slots] ** 2
    g_sl = type(geom)(np.sqrt(d1sq), np.sqrt(d2sq))
    p_u = np.asarray(optimal_relay_power(g_sl, sc.radio, sc.payload), dtype=float).reshape(-1)
    a1, a2 = fdr_hop_consts(sc.radio, sc.payload, p_u)
    a1 = np.broadcast_to(a1, p_u.shape)
    a2 = np.broadcast_to(a2, p_u.shape)
    r0 = np.log2(np.minimum(a1 / d1sq, a2 / d2sq))
    j = lay.j
    n_vars = lay.rho + 1 + j + lay.n - 1
    r_idx = lay.rho + 1 + np.arange(j)
    bs = np.broadcast_to(sc.bs_xy, (j, 2))
    gn = sc.gn_xy[lay.gn]
    e0 = exp2_clamped(r0)
    none = -np.ones(j, dtype=int)
    blocks = [
        # (d^2 / A) 2^r0 - 1 + ln2 (r - r0) <= 0, the tangent form of d^2 / A <= 2^-r
        _dist_block(lay, "fdr_gn_hop", r_idx, gn, h_u, e0 / a1, -1.0 - LN2 * r0, LN2 * np.ones(j)),
        _dist_block(lay, "fdr_bs_hop", r_idx, bs, dh, e0 / a2, -1.0 - LN2 * r0, LN2 * np.ones(j)),
        # both hops must clear the outage threshold: d^2 thr / A - 1 <= 0
        _dist_block(lay, "snr_threshold_gn", none, gn, h_u, thr / a1, -np.ones(j), np.zeros(j)),
        _dist_block(lay, "snr_threshold_bs", none, bs, dh, thr / a2, -np.ones(j), np.zeros(j)),
    ]
    v_idx = lay.rho + 1 + j + np.arange(lay.n - 1)
    blocks += _motion_blocks(lay, v_idx, sc.payload.max_tx_power_w)
    rate_sum, served, row_of = _rate_sum_block(lay, n_vars, [r_idx], 1.0, np.zeros(j))
    blocks.append(rate_sum)
    r_start = r0 - 1e-7
    sums = np.zeros(len(served))
    np.add.at(sums, row_of, r_start)
    x0 = _start_point(lay, xy, r_start, _speed_start(lay, xy, sc.payload.max_tx_power_w))
    x0[lay.rho] = float(np.min(sums)) - 1e-6 * max(1.0, abs(float(np.min(sums))))
    lo, hi = _bounds(lay, n_vars, np.minimum(r0 - 10, -60.0), np.maximum(r0 + 10, 60.0))
    prog = ConvexProgram(n_vars, _unit(n_vars, lay.rho), blocks, lo, hi)
    return prog, x0, {"r0": r0, "p_u": p_u}


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def schedule_min_bits(scenario, plan, schedule):
    """Exact max-min objective of a fixed (plan, schedule) pair, in bits."""
    from .schedule import build_rate_matrix, min_served_bits

    return min_served_bits(build_rate_matrix(scenario, plan).bits, schedule.assign)


def _optimize(scenario, schedule, init, iters, round_builder, tol, solver_opts):
    lay = _Layout(scenario, schedule, init)
    half = scenario.field_side_m / 2.0
    a = scenario.airframe
    bandwidth_bits = scenario.radio.bandwidth_hz * a.slot_seconds
    if lay.j == 0:
        return ScaResult(init, 0.0, ScaState({}), 0)
    xy = _interior_xy(init.xy, half)
    plan = TrajectoryPlan(xy, a.altitude_m, a.slot_seconds)
    best_plan, best_exact = init, schedule_min_bits(scenario, init, schedule)
    state = ScaState({}, exact_history=[best_exact])
    opts = solver_opts or SCA_SOLVER
    rounds = 0
    for it in range(iters):
        prog, x0, anchors = round_builder(lay, plan.xy, opts)
        res = solve(prog, x0, opts)
        state.status.append(res.status)
        if res.status == "infeasible":
            if it == 0:
                raise TrajectoryInfeasible(f"SCA subproblem infeasible at the initial trajectory: {res.diagnosis}")
            break
        rounds += 1
        state.anchors = anchors
        if "p_u" in anchors:
            state.relay_power_w = anchors["p_u"]
        obj = res.objective_value * bandwidth_bits
        xy_new = lay.positions(res.x_star)
        plan = TrajectoryPlan(xy_new, a.altitude_m, a.slot_seconds)
        exact = schedule_min_bits(scenario, plan, schedule)
        state.objective_history.append(obj)
        state.exact_history.append(exact)
        if exact > best_exact and check_plan(scenario, plan).ok:
            best_plan, best_exact = plan, exact
        hist = state.objective_history
        if len(hist) >= 2 and hist[-1] - hist[-2] <= tol * max(abs(hist[-1]), 1e-300):
            break
    return ScaResult(best_plan, best_exact, state, rounds)


def optimize_trajectory_ris(scenario, schedule, init, iters=20, tol=1e-5, solver_opts=None):
    """SCA over the tour positions of a UAV-mounted RIS for a fixed schedule.

    Returns the best exact-rate iterate (the initial plan when no round
    improves it). Rates inside the subproblem use log2(SNR) in place of
    log2(1 + SNR), which never overstates the true rate.
    """
    if scenario.payload.kind != "ris":
        raise ValueError("scenario does not carry an RIS")
    return _optimize(scenario, schedule, init, iters, _ris_round, tol, solver_opts)


def optimize_trajectory_fdr(scenario, schedule, init, iters=20, tol=1e-5, solver_opts=None):
    """SCA over the tour positions of a UAV-mounted full-duplex relay.

    The relay power of every scheduled slot is frozen at its max-min value
    for the current positions during a round and refreshed afterwards.
    """
    if scenario.payload.kind != "fdr":
        raise ValueError("scenario does not carry an FDR")
    return _optimize(scenario, schedule, init, iters, _fdr_round, tol, solver_opts)


def optimize_trajectory(scenario, schedule, init, iters=20, tol=1e-5, solver_opts=None):
    fn = optimize_trajectory_ris if scenario.payload.kind == "ris" else optimize_trajectory_fdr
    return fn(scenario, schedule, init, iters, tol, solver_opts)
