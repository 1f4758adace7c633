"""Alternating optimization of slot count, TDMA schedule and UAV tour.

For each candidate slot count N the driver starts from a feasible tour,
then alternates an exact max-min schedule for the current tour with SCA
rounds on the tour for the current schedule. Candidates are visited from
the longest flight down; a candidate is skipped when an energy argument
shows it cannot beat the best value found so far.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import energy
from .channel import LinkGeometry, rate_table, snr_and_power, thresholded_rate
from .schedule import (
    IDLE,
    Schedule,
    benchmark_schedule,
    build_rate_matrix,
    count_bound,
    served_bits,
    solve_maxmin_schedule,
)
from .trajectory import (
    BENCHMARK_KINDS,
    TrajectoryInfeasible,
    TrajectoryPlan,
    benchmark_trajectory,
    check_plan,
    hover_plan,
    max_feasible_scale,
    optimize_trajectory,
)

log = logging.getLogger(__name__)

INIT_KINDS = ("auto", "hover") + BENCHMARK_KINDS
DEFAULT_SCALES = (0.1, 0.25, 0.5, 0.75, 1.0)


@dataclass
class AoSettings:
    iter1: int = 20  # outer AO iterations
    iter2: int = 20  # SCA rounds per AO iteration
    ao_tol: float = 1e-4  # relative improvement counted as progress
    ao_patience: int = 2  # stop after this many AO iterations without progress
    sca_tol: float = 1e-5
    schedule_gap: float = 1e-4
    # tree-search node cap per schedule solve; 0 keeps the LP rounding plus
    # local search, which tree search rarely improves on long moving tours
    schedule_nodes: int = 0
    prune: bool = True

    def __post_init__(self):
        if self.iter1 < 1 or self.iter2 < 1:
            raise ValueError("iter1 and iter2 must be at least 1")


@dataclass
class Candidate:
    n: int
    status: str  # optimized, pruned, infeasible
    r_min: float = 0.0
    bound: float = math.inf
    init: str = ""
    ao_iters: int = 0


@dataclass
class OptimizationReport:
    best_n: int | None
    best_r_min: float
    schedule: Schedule | None
    plan: TrajectoryPlan | None
    ao_history: list = field(default_factory=list)  # (iter, r_min) after each AO iteration
    step_history: list = field(default_factory=list)  # (iter, block, r_min) after each block solve
    sca_history: list = field(default_factory=list)  # SCA objective history per AO iteration
    energy_profile: energy.EnergyProfile | None = None
    wall_time_s: float = 0.0
    status: str = "ok"
    per_gn: list = field(default_factory=list)
    init: str = ""
    candidates: list = field(default_factory=list)
    gn_xy: np.ndarray | None = None
    bs_xy: np.ndarray | None = None

    def to_dict(self):
        prof = self.energy_profile
        return {
            "status": self.status,
            "best_n": self.best_n,
            "best_r_min_bits": self.best_r_min,
            "per_gn_bits": list(map(float, self.per_gn)),
            "init": self.init,
            "schedule": None if self.schedule is None else [int(a) for a in self.schedule.assign],
            "trajectory": None if self.plan is None else {
                "altitude_m": self.plan.altitude_m,
                "slot_seconds": self.plan.slot_seconds,
                "xy_m": self.plan.xy.tolist(),
            },
            "ao_history": [[int(i), float(r)] for i, r in self.ao_history],
            "step_history": [[int(i), b, float(r)] for i, b, r in self.step_history],
            "sca_history": [list(map(float, h)) for h in self.sca_history],
            "energy": None if prof is None else {
                "per_slot_w": prof.per_slot_w.tolist(),
                "total_j": prof.total_j,
                "budget_j": prof.budget_j,
            },
            "candidates": [vars(c) for c in self.candidates],
            "gn_xy_m": None if self.gn_xy is None else np.asarray(self.gn_xy).tolist(),
            "bs_xy_m": None if self.bs_xy is None else np.asarray(self.bs_xy).tolist(),
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, default=float)
        if path is not None:
            with open(path, "w", newline="\n") as fh:
                fh.write(text + "\n")
        return text


# -- evaluation -----------------------------------------------------------------


def slot_relay_power(scenario, plan, schedule):
    """Relay power actually radiated per slot: the max-min power when serving, else 0."""
    assign = np.asarray(schedule.assign)
    out = np.zeros(plan.n)
    if scenario.payload.kind == "fdr":
        _, _, p_u = rate_table(scenario, plan.xy)
        busy = np.nonzero(assign != IDLE)[0]
        out[busy] = p_u[assign[busy], busy]
    return out


def evaluate_pair(scenario, plan, schedule):
    """Exact (r_min, per-node bits, energy_ok) of a tour and schedule."""
    if plan.n != schedule.n:
        raise ValueError(f"plan has {plan.n} slots but the schedule has {schedule.n}")
    bits = build_rate_matrix(scenario, plan).bits
    per_gn = served_bits(bits, schedule.assign)
    r_min = float(np.min(per_gn)) if len(per_gn) else 0.0
    ok = check_plan(scenario, plan, p_u_w=slot_relay_power(scenario, plan, schedule)).energy_ok
    return r_min, per_gn, ok


# -- candidate slot counts --------------------------------------------------------


def n_candidates(scenario, full=False, count=9):
    """Slot counts to try, longest flight first.

    The default grid is N_max and ``count - 1`` further values evenly spaced
    down to N_min; ``full`` lists every value.
    """
    hi, lo = energy.n_max(scenario), energy.n_min(scenario)
    if hi < 3:
        return []
    lo = max(lo, 3)
    if full or hi - lo + 1 <= count:
        return list(range(hi, lo - 1, -1))
    grid = np.unique(np.round(np.linspace(lo, hi, count)).astype(int))
    return sorted(grid.tolist(), reverse=True)


def reach_radius(scenario, n_slots):
    """Largest distance from the start any closed N-slot tour can reach on the battery.

    Slot power is convex in speed, so P(v) >= P(0) + P'(0) v and the path
    length is at most (B - N P(0) dt) / P'(0); a closed tour gets half of it.
    """
    a = scenario.airframe
    p_u = energy.planning_relay_power(scenario)
    rw = energy.payload_weight(scenario.payload)
    c1, c2, _ = a.motor_coeffs
    w0 = a.uav_weight_kg + energy.drag_weight(a) + rw
    dp0 = (2 * c1 * w0 + c2) * energy.thrust_headroom(a, rw) / a.max_speed_mps
    slack = a.battery_j - n_slots * energy.slot_power(scenario, 0.0, p_u) * a.slot_seconds
    if slack < 0:
        return -1.0
    if dp0 <= 0:
        return math.inf
    return slack / dp0 / 2.0


def n_upper_bound(scenario, n_slots, start_xy):
    """Upper bound on r_min (bits) over all closed N-slot tours from ``start_xy``.

    Every slot of node k is served from within the reach radius, where its
    rate is at most the rate at the smallest possible GN and BS distances;
    the count bound then shares the N slots as well as possible.
    """
    rad = reach_radius(scenario, n_slots)
    if rad < 0:
        return -math.inf
    a = scenario.airframe
    start = np.asarray(start_xy, dtype=float)
    g1 = np.maximum(np.linalg.norm(scenario.gn_xy - start, axis=1) - rad, 0.0)
    g2 = max(float(np.linalg.norm(scenario.bs_xy - start)) - rad, 0.0)
    d1 = np.sqrt(g1**2 + a.altitude_m**2)
    d2 = np.full_like(d1, math.hypot(g2, a.altitude_m - scenario.bs_height_m))
    snr, _ = snr_and_power(scenario, LinkGeometry(d1, d2))
    best = thresholded_rate(scenario, snr) * a.slot_seconds
    return count_bound(best[:, None], np.array([n_slots]))


# -- initial tours -----------------------------------------------------------------


def _resolve_start(scenario, start):
    if start is None or (isinstance(start, str) and start == "origin"):
        return np.zeros(2)
    if isinstance(start, str):
        if start == "bs":
            return scenario.bs_xy.copy()
        raise ValueError(f"unknown start {start!r}")
    return np.asarray(start, dtype=float)


def _benchmark_candidates(scenario, n_slots, scales=DEFAULT_SCALES):
    for kind in BENCHMARK_KINDS:
        top = max_feasible_scale(kind, scenario, n_slots)
        if top is None:
            continue
        for frac in scales:
            try:
                yield f"{kind}@{top * frac:.4g}", benchmark_trajectory(kind, scenario, n_slots, top * frac)
            except TrajectoryInfeasible:
                continue


def initial_plan(scenario, n_slots, init_kind="auto", start=None):
    """Feasible starting tour of N slots and the name of what was used.

    "auto" tries hover and every benchmark shape at the sizes searched by
    ``run_benchmark`` and keeps the tour with the best benchmark TDMA value
    (hover wins ties). A named benchmark is shrunk to the largest size that
    fits. Benchmarks start at the origin; hover uses ``start``.
    """
    start_xy = _resolve_start(scenario, start)
    hover = hover_plan(scenario, n_slots, start_xy)
    if init_kind == "hover":
        return hover, "hover"
    if init_kind == "auto":
        if np.any(start_xy != 0) or n_slots < max(scenario.k, 2):
            return hover, "hover"
        best = (evaluate_pair(scenario, hover, benchmark_schedule(scenario, hover))[0], hover, "hover")
        for name, plan in _benchmark_candidates(scenario, n_slots):
            r, _, ok = evaluate_pair(scenario, plan, benchmark_schedule(scenario, plan))
            if ok and r > best[0]:
                best = (r, plan, name)
        return best[1], best[2]
    if init_kind not in BENCHMARK_KINDS:
        raise ValueError(f"unknown initial trajectory {init_kind!r}")
    scale = max_feasible_scale(init_kind, scenario, n_slots)
    if scale is None:
        return hover, "hover"
    try:
        return benchmark_trajectory(init_kind, scenario, n_slots, scale), f"{init_kind}@{scale:.4g}"
    except TrajectoryInfeasible:
        return hover, "hover"


# -- alternating optimization ------------------------------------------------------


@dataclass
class _Run:
    r_min: float
    plan: TrajectoryPlan
    schedule: Schedule
    ao_history: list
    step_history: list
    sca_history: list
    ao_iters: int


def _schedule(scenario, plan, warm, cfg):
    res = solve_maxmin_schedule(
        build_rate_matrix(scenario, plan), rel_gap=cfg.schedule_gap,
        node_limit=cfg.schedule_nodes, warm_start=warm,
    )
    return res.schedule


def alternate(scenario, plan, cfg=None):
    """AO from a feasible tour: schedule, then SCA on the tour, until progress stalls.

    Every accepted block solve is checked with the exact evaluator, so the
    recorded r_min never decreases.
    """
    cfg = cfg or AoSettings()
    sched = benchmark_schedule(scenario, plan) if plan.n >= scenario.k else Schedule(np.full(plan.n, IDLE))
    r, _, _ = evaluate_pair(scenario, plan, sched)
    steps = [(0, "init", r)]
    ao, sca_hist = [], []
    stall = 0
    it = 0
    for it in range(1, cfg.iter1 + 1):
        before = r
        cand = _schedule(scenario, plan, sched, cfg)
        rc, _, _ = evaluate_pair(scenario, plan, cand)
        if rc >= r:
            sched, r = cand, rc
        steps.append((it, "schedule", r))
        try:
            res = optimize_trajectory(scenario, sched, plan, iters=cfg.iter2, tol=cfg.sca_tol)
        except TrajectoryInfeasible as exc:
            log.info("SCA skipped at N=%d: %s", plan.n, exc)
            res = None
        if res is not None:
            sca_hist.append(list(res.state.objective_history))
            rt, _, ok = evaluate_pair(scenario, res.plan, sched)
            if ok and rt >= r:
                plan, r = res.plan, rt
        else:
            sca_hist.append([])
        steps.append((it, "trajectory", r))
        ao.append((it, r))
        gain = (r - before) / max(abs(before), 1e-300)
        stall = stall + 1 if gain < cfg.ao_tol else 0
        if stall >= cfg.ao_patience:
            break
    # a last schedule solve for the final tour
    cand = _schedule(scenario, plan, sched, cfg)
    rc, _, _ = evaluate_pair(scenario, plan, cand)
    if rc >= r:
        sched, r = cand, rc
    steps.append((it, "final", r))
    return _Run(r, plan, sched, ao, steps, sca_hist, it)


def run_algorithm1(scenario, init_kind="auto", iter1=20, iter2=20, full_n_scan=False,
                   n_values=None, start=None, settings=None):
    """Best (N, tour, schedule) over candidate slot counts by alternating optimization."""
    t0 = time.perf_counter()
    if init_kind not in INIT_KINDS:
        raise ValueError(f"unknown initial trajectory {init_kind!r}")
    cfg = settings or AoSettings(iter1=iter1, iter2=iter2)
    start_xy = _resolve_start(scenario, start)
    ns = list(n_values) if n_values is not None else n_candidates(scenario, full=full_n_scan)
    ns = sorted(set(int(n) for n in ns), reverse=True)
    best, best_init = None, ""
    cands = []
    for n in ns:
        bound = n_upper_bound(scenario, n, start_xy)
        if cfg.prune and best is not None and bound < best.r_min:
            cands.append(Candidate(n, "pruned", bound=bound))
            continue
        try:
            plan, used = initial_plan(scenario, n, init_kind, start_xy)
            if not check_plan(scenario, plan).ok:
                raise TrajectoryInfeasible(f"no feasible initial tour with {n} slots")
            run = alternate(scenario, plan, cfg)
        except (TrajectoryInfeasible, energy.EnergyModelError) as exc:
            log.info("N=%d infeasible: %s", n, exc)
            cands.append(Candidate(n, "infeasible", bound=bound))
            continue
        cands.append(Candidate(n, "optimized", run.r_min, bound, used, run.ao_iters))
        # ties go to the smaller N, which is visited later
        if best is None or run.r_min >= best.r_min:
            best, best_init = run, used
    wall = time.perf_counter() - t0
    if best is None:
        return OptimizationReport(None, 0.0, None, None, status="infeasible", candidates=cands,
                                  wall_time_s=wall, gn_xy=scenario.gn_xy, bs_xy=scenario.bs_xy)
    r_min, per_gn, ok = evaluate_pair(scenario, best.plan, best.schedule)
    prof = energy.energy_profile(scenario, best.plan.speeds, slot_relay_power(scenario, best.plan, best.schedule))
    return OptimizationReport(
        best_n=best.plan.n,
        best_r_min=r_min,
        schedule=best.schedule,
        plan=best.plan,
        ao_history=best.ao_history,
        step_history=best.step_history,
        sca_history=best.sca_history,
        energy_profile=prof,
        wall_time_s=wall,
        status="ok" if ok else "energy_violation",
        per_gn=list(per_gn),
        init=best_init,
        candidates=cands,
        gn_xy=scenario.gn_xy,
        bs_xy=scenario.bs_xy,
    )


# -- benchmark search ----------------------------------------------------------------


@dataclass
class BenchmarkResult:
    r_min: float
    kind: str | None
    n: int | None
    scale: float | None
    plan: TrajectoryPlan | None
    schedule: Schedule | None


def run_benchmark(scenario, kinds=BENCHMARK_KINDS, full_n_scan=False, n_values=None, scales=DEFAULT_SCALES):
    """Best benchmark tour under the benchmark TDMA scheme.

    Searches slot counts, tour shapes and tour sizes, where a size is a
    fraction of the largest size that fits the battery for that N.
    """
    ns = list(n_values) if n_values is not None else n_candidates(scenario, full=full_n_scan)
    best = BenchmarkResult(-math.inf, None, None, None, None, None)
    for kind in kinds:
        for n in ns:
            if n < max(scenario.k, 2):
                continue
            top = max_feasible_scale(kind, scenario, n)
            if top is None:
                continue
            for frac in scales:
                try:
                    plan = benchmark_trajectory(kind, scenario, n, top * frac)
                except TrajectoryInfeasible:
                    continue
                sched = benchmark_schedule(scenario, plan)
                r, _, ok = evaluate_pair(scenario, plan, sched)
                if ok and r > best.r_min:
                    best = BenchmarkResult(r, kind, n, top * frac, plan, sched)
    if best.kind is None:
        best.r_min = 0.0
    return best
