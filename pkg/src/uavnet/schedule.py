"""Max-min TDMA scheduling for a fixed trajectory.

Given the per-slot rate r[k, n] of every ground node, pick at most one node
per slot so that the smallest accumulated rate is as large as possible::

    maximize  r_min
    s.t.      sum_k a[k, n] <= 1               for every slot n
              sum_n a[k, n] r[k, n] >= r_min    for every node k
              a[k, n] in {0, 1}

Slots whose rate columns are identical (a hovering UAV produces hundreds
of them) are merged into one general-integer variable per node and column
type, which shrinks the search space without changing the optimum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .channel import rate_table

log = logging.getLogger(__name__)

IDLE = -1


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Per-slot rates r[k, n] in bit/s for a fixed trajectory (0 in outage)."""

    rates: np.ndarray
    slot_seconds: float = 1.0
    relay_power_w: np.ndarray | None = None

    def __post_init__(self):
        r = np.array(self.rates, dtype=float)
        if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
            raise ValueError("rate matrix must be K x N with K, N >= 1")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("rates must be finite and nonnegative")
        r.flags.writeable = False
        object.__setattr__(self, "rates", r)

    @property
    def k(self):
        return self.rates.shape[0]

    @property
    def n(self):
        return self.rates.shape[1]

    @property
    def bits(self):
        """Bits deliverable per (node, slot)."""
        return self.rates * self.slot_seconds


@dataclass(frozen=True, eq=False)
class Schedule:
    """Served node per slot: a 0-based node index, or -1 when the slot is idle."""

    assign: np.ndarray

    def __post_init__(self):
        a = np.array(self.assign, dtype=int)
        if a.ndim != 1:
            raise ValueError("assignment must be one-dimensional")
        if np.any(a < IDLE):
            raise ValueError("assignment entries must be -1 or a node index")
        a.flags.writeable = False
        object.__setattr__(self, "assign", a)

    @property
    def n(self):
        return len(self.assign)

    def indicator(self, k):
        """The K x N binary matrix a[k, n]."""
        a = np.zeros((k, self.n), dtype=int)
        served = self.assign >= 0
        a[self.assign[served], np.nonzero(served)[0]] = 1
        return a

    def __eq__(self, other):
        return isinstance(other, Schedule) and np.array_equal(self.assign, other.assign)

    def __hash__(self):
        return hash(self.assign.tobytes())


def served_bits(bits, assign):
    """Accumulated bits per node, summed in slot order."""
    bits = np.asarray(bits, dtype=float)
    k = bits.shape[0]
    if len(assign) != bits.shape[1]:
        raise ValueError(f"schedule has {len(assign)} slots but the rate matrix has {bits.shape[1]}")
    if np.any(np.asarray(assign) >= k):
        raise ValueError("schedule refers to a node outside the rate matrix")
    total = [0.0] * k
    for n, j in enumerate(assign):
        if j >= 0:
            total[j] += float(bits[j, n])
    return np.array(total)


def min_served_bits(bits, assign):
    return float(np.min(served_bits(bits, assign)))


@dataclass
class ScheduleResult:
    schedule: Schedule
    r_min: float  # bits
    upper_bound: float  # bits
    gap: float
    certified: bool
    starved: tuple = ()
    nodes: int = 0
    method: str = ""
    bound_trace: list = field(default_factory=list)

    def __iter__(self):
        yield self.schedule
        yield self.r_min


def build_rate_matrix(scenario, plan):
    """Evaluate the thresholded rate of every node at every slot position of ``plan``."""
    rates, _, p_u = rate_table(scenario, plan.xy)
    return RateMatrix(rates, scenario.airframe.slot_seconds, p_u)


# -- preprocessing ---------------------------------------------------------


@dataclass
class _Reduced:
    """The instance restricted to useful nodes and merged column types."""

    bits: np.ndarray  # (K', T) bits per slot of each type, for the active nodes
    counts: np.ndarray  # (T,) number of slots of each type
    members: list  # slot indices of each type
    nodes: np.ndarray  # original indices of the active nodes
    scale: float


def _reduce(bits, active):
    sub = bits[active]
    useful = np.nonzero(np.any(sub > 0, axis=0))[0]
    cols = sub[:, useful]
    _, first, inverse = np.unique(cols.T, axis=0, return_index=True, return_inverse=True)
    inverse = np.ravel(inverse)
    order = np.argsort(first)  # keep types in order of first appearance
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    members = [[] for _ in order]
    for pos, t in enumerate(inverse):
        members[rank[t]].append(int(useful[pos]))
    types = cols[:, first[order]]
    scale = float(np.max(types)) if types.size else 1.0
    return _Reduced(types, np.array([len(m) for m in members]), members, np.nonzero(active)[0], scale)


def count_bound(bits, counts):
    """Upper bound on the max-min value ignoring that nodes compete for slots.

    Node k needs c_k slots from its own best rates to reach a level r; the
    largest r with sum_k c_k(r) <= total slots bounds the optimum. Growing
    the count of the currently poorest node one slot at a time attains it.
    """
    k_count, _ = bits.shape
    total = int(np.sum(counts))
    prefix = []
    for k in range(k_count):
        order = np.argsort(-bits[k], kind="stable")
        per_slot = np.repeat(bits[k, order], counts[order])
        prefix.append(np.concatenate([[0.0], np.cumsum(per_slot)]))
    level = np.zeros(k_count, dtype=int)
    values = np.array([p[0] for p in prefix])
    for _ in range(total):
        k = int(np.argmin(values))
        if level[k] + 1 >= len(prefix[k]):
            break
        level[k] += 1
        values[k] = prefix[k][level[k]]
    return float(np.min(values))


def _lp_relaxation(bits, counts, lower, upper, backend="highs"):
    """LP bound with x[k, t] in [lower, upper]; returns (value, x) or (-inf, None)."""
    k_count, t_count = bits.shape
    nv = k_count * t_count + 1
    c = np.zeros(nv)
    c[-1] = -1.0
    rows = np.repeat(np.arange(t_count), k_count)
    cols = (np.arange(k_count)[None, :] * t_count + np.arange(t_count)[:, None]).ravel()
    slot_rows = sp.csr_matrix((np.ones(k_count * t_count), (rows, cols)), shape=(t_count, nv))
    rate_rows = sp.hstack([
        sp.block_diag([-bits[k][None, :] for k in range(k_count)]),
        sp.csr_matrix(np.ones((k_count, 1))),
    ])
    a_ub = sp.vstack([slot_rows, rate_rows], format="csr")
    b_ub = np.concatenate([counts.astype(float), np.zeros(k_count)])
    lo = np.append(lower.ravel(), 0.0)
    hi = np.append(upper.ravel(), np.sum(counts) * 1.0)
    if backend == "barrier":
        return _lp_barrier(c, a_ub, b_ub, lo, hi, k_count, t_count)
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=np.column_stack([lo, hi]), method="highs-ds")
    if res.status != 0:
        return -np.inf, None
    return -res.fun, res.x[:-1].reshape(k_count, t_count)


def _lp_barrier(c, a_ub, b_ub, lo, hi, k_count, t_count):
    from .convex import ConvexProgram, SolveOptions, linear_block, solve

    fixed = lo >= hi
    if np.any(fixed[:-1]):
        # the barrier needs a nonempty interior, so pinned variables become constants
        keep = ~fixed
        b_ub = b_ub - a_ub[:, fixed] @ lo[fixed]
        a_ub = a_ub[:, keep]
        c, lo_k, hi_k = c[keep], lo[keep], hi[keep]
    else:
        keep, lo_k, hi_k = np.ones(len(c), dtype=bool), lo, hi
    prog = ConvexProgram(len(c), -c, [linear_block("lp", a_ub, b_ub, coupling=True)], lo_k, hi_k)
    res = solve(prog, lo_k + 0.5 * np.minimum(hi_k - lo_k, 1.0), SolveOptions(gap_tol=1e-10))
    if res.status == "infeasible":
        return -np.inf, None
    x = lo.copy()
    x[keep] = res.x_star
    return float(x[-1]), x[:-1].reshape(k_count, t_count)


# -- incumbents ------------------------------------------------------------


def _expand(red, x, n_slots, k_full):
    """Turn per-type counts into a slot-level assignment."""
    assign = np.full(n_slots, IDLE, dtype=int)
    for t, slots in enumerate(red.members):
        pos = 0
        for k in range(x.shape[0]):
            take = int(x[k, t])
            for s in slots[pos:pos + take]:
                assign[s] = red.nodes[k]
            pos += take
    return assign


def _round_counts(bits, counts, x):
    """Integer counts from a fractional solution; leftovers go to the poorest node."""
    xi = np.floor(x + 1e-9).astype(int)
    xi = np.minimum(xi, counts[None, :])
    totals = (bits * xi).sum(axis=1)
    for t in np.argsort(-bits.max(axis=0), kind="stable"):
        for _ in range(int(counts[t] - xi[:, t].sum())):
            cand = np.nonzero(bits[:, t] > 0)[0]
            if len(cand) == 0:
                break
            k = cand[np.argmin(totals[cand])]
            xi[k, t] += 1
            totals[k] += bits[k, t]
    return xi


def _improve(bits, xi, counts, max_rounds=10_000):
    """Local search on type counts: move one slot or swap two to lift the smallest totals."""
    xi = xi.copy()
    totals = (bits * xi).sum(axis=1)
    k_count, _ = bits.shape
    for _ in range(max_rounds):
        kmin = int(np.argmin(totals))
        cur = totals[kmin]
        # a move is accepted when both nodes it touches end above the current minimum,
        # which raises the sorted totals lexicographically even when the minimum is tied
        best = (cur * (1 + 1e-12) + 1e-300, None)
        # move a slot of type t from donor j to kmin
        for j in range(k_count):
            if j == kmin:
                continue
            ok = (xi[j] > 0) & (bits[kmin] > 0)
            if not ok.any():
                continue
            val = np.minimum(totals[j] - bits[j], cur + bits[kmin])
            val = np.where(ok, val, -np.inf)
            t = int(np.argmax(val))
            if val[t] > best[0]:
                best = (val[t], ("move", j, t))
            # swap: kmin gives type u to j and receives type t
            have = np.nonzero(xi[kmin] > 0)[0]
            if len(have) == 0:
                continue
            gain_k = bits[kmin][None, :] - bits[kmin][have][:, None]  # (u, t)
            gain_j = bits[j][have][:, None] - bits[j][None, :]
            val = np.minimum(cur + gain_k, totals[j] + gain_j)
            val = np.where(xi[j][None, :] > 0, val, -np.inf)
            u, t = np.unravel_index(int(np.argmax(val)), val.shape)
            if val[u, t] > best[0]:
                best = (val[u, t], ("swap", j, t, int(have[u])))
        if best[1] is None:
            break
        op = best[1]
        if op[0] == "move":
            _, j, t = op
            xi[j, t] -= 1
            xi[kmin, t] += 1
        else:
            _, j, t, u = op
            xi[j, t] -= 1
            xi[kmin, t] += 1
            xi[kmin, u] -= 1
            xi[j, u] += 1
        totals = (bits * xi).sum(axis=1)
    return xi


def _counts_of(red, assign):
    """Per-type counts of an existing slot-level assignment (for warm starts)."""
    pos = {int(k): i for i, k in enumerate(red.nodes)}
    xi = np.zeros(red.bits.shape, dtype=int)
    for t, slots in enumerate(red.members):
        for s in slots:
            j = int(assign[s])
            if j in pos and red.bits[pos[j], t] > 0:
                xi[pos[j], t] += 1
    return xi


# -- exact search ----------------------------------------------------------


def _branch_and_bound(bits, counts, incumbent, rel_gap, node_limit, backend, trace):
    """Depth-first branch-and-bound on the type counts x[k, t]."""
    k_count, t_count = bits.shape
    best_x = incumbent
    best_v = float(np.min((bits * incumbent).sum(axis=1)))
    lower = np.zeros((k_count, t_count))
    upper = np.where(bits > 0, counts[None, :], 0).astype(float)
    root_v, root_x = _lp_relaxation(bits, counts, lower, upper, backend)
    stack = [(root_v, lower, upper, root_x)]
    nodes = 0
    pruned = -np.inf  # largest bound among nodes discarded within the gap tolerance
    while stack:
        ub, lo, hi, x = stack.pop()
        if x is None:
            continue
        if ub <= best_v * (1 + rel_gap):
            pruned = max(pruned, ub)
            continue
        nodes += 1
        if trace is not None:
            trace.append((ub, best_v))
        if nodes > node_limit:
            stack.append((ub, lo, hi, x))
            break
        cand = _improve(bits, _round_counts(bits, counts, x), counts)
        v = float(np.min((bits * cand).sum(axis=1)))
        if v > best_v:
            best_x, best_v = cand, v
        frac = np.abs(x - np.round(x))
        frac[bits <= 0] = 0.0
        if frac.max() < 1e-9:
            xi = np.round(x).astype(int)
            v = float(np.min((bits * xi).sum(axis=1)))
            if v > best_v:
                best_x, best_v = xi, v
            continue
        # most fractional: closest to one half
        k, t = np.unravel_index(int(np.argmin(np.abs(frac - 0.5) + (frac < 1e-9) * 2)), frac.shape)
        down_hi = hi.copy()
        down_hi[k, t] = np.floor(x[k, t])
        up_lo = lo.copy()
        up_lo[k, t] = np.ceil(x[k, t])
        kids = []
        for clo, chi in ((lo, down_hi), (up_lo, hi)):
            if np.any(clo > chi):
                continue
            v, cx = _lp_relaxation(bits, counts, clo, chi, backend)
            if cx is None:
                continue
            if v > best_v * (1 + rel_gap):
                kids.append((min(v, ub), clo, chi, cx))
            else:
                pruned = max(pruned, min(v, ub))
        # push the weaker child first so the stronger one is explored next
        kids.sort(key=lambda c: c[0])
        stack.extend(kids)
    open_bound = max([s[0] for s in stack if s[3] is not None], default=-np.inf)
    return best_x, best_v, max(open_bound, pruned, best_v), nodes, root_v


def _milp(bits, counts, floor, cap, rel_gap, time_limit, node_limit=None):
    k_count, t_count = bits.shape
    nv = k_count * t_count + 1
    c = np.zeros(nv)
    c[-1] = -1.0
    rows = np.repeat(np.arange(t_count), k_count)
    cols = (np.arange(k_count)[None, :] * t_count + np.arange(t_count)[:, None]).ravel()
    slot_rows = sp.csr_matrix((np.ones(k_count * t_count), (rows, cols)), shape=(t_count, nv))
    rate_rows = sp.hstack([
        sp.block_diag([-bits[k][None, :] for k in range(k_count)]),
        sp.csr_matrix(np.ones((k_count, 1))),
    ])
    cons = [
        LinearConstraint(slot_rows, -np.inf, counts.astype(float)),
        LinearConstraint(rate_rows, -np.inf, 0.0),
    ]
    hi = np.append(np.where(bits > 0, counts[None, :], 0).ravel().astype(float), cap)
    lo = np.zeros(nv)
    lo[-1] = floor  # the incumbent's value, which lets HiGHS prune from the start
    integrality = np.append(np.ones(nv - 1), 0)
    opts = {"mip_rel_gap": rel_gap, "disp": False}
    if time_limit is not None:
        opts["time_limit"] = float(time_limit)
    if node_limit is not None:
        opts["node_limit"] = int(node_limit)
    res = milp(c, integrality=integrality, bounds=Bounds(lo, hi), constraints=cons, options=opts)
    if res.x is None:
        return None, getattr(res, "mip_dual_bound", None)
    xi = np.round(res.x[:-1]).astype(int).reshape(k_count, t_count)
    bound = getattr(res, "mip_dual_bound", None)
    return xi, (-bound if bound is not None and np.isfinite(bound) else None)


def _finish(bits, assign):
    """Fill idle slots that some node can use and drop zero-rate assignments."""
    assign = assign.copy()
    k_count = bits.shape[0]
    served = np.arange(len(assign))[assign >= 0]
    assign[served[bits[assign[served], served] <= 0]] = IDLE
    totals = served_bits(bits, assign)
    for n in np.nonzero(assign == IDLE)[0]:
        cand = [k for k in range(k_count) if bits[k, n] > 0]
        if cand:
            k = min(cand, key=lambda j: (totals[j], j))
            assign[n] = k
            totals[k] += bits[k, n]
    return assign


def solve_maxmin_schedule(rates, method="auto", rel_gap=1e-6, time_limit=None,
                          node_limit=200_000, warm_start=None, lp_backend="highs", trace=False):
    """Globally optimal max-min TDMA assignment for a rate matrix.

    Returns a ScheduleResult (unpackable as ``schedule, r_min``) whose
    ``r_min`` is in bits. ``method`` is "bnb" (own branch-and-bound),
    "highs" (HiGHS branch-and-cut) or "auto", which uses the former on small
    instances. The result is ``certified`` when the incumbent is within
    ``rel_gap`` of the proven upper bound. ``node_limit=0`` skips the tree
    search and returns the rounded, locally improved LP solution with the
    LP and count bounds. Nodes whose rates are all zero are
    reported in ``starved``; the optimum is then 0 and the remaining nodes
    are still scheduled max-min among themselves.
    """
    if method not in ("auto", "bnb", "highs"):
        raise ValueError(f"unknown method {method!r}")
    if not isinstance(rates, RateMatrix):
        rates = RateMatrix(rates)
    bits = rates.bits
    k_full, n_slots = bits.shape
    starved = tuple(int(k) for k in np.nonzero(~np.any(bits > 0, axis=1))[0])
    active = np.any(bits > 0, axis=1)
    if not active.any():
        sched = Schedule(np.full(n_slots, IDLE))
        return ScheduleResult(sched, 0.0, 0.0, 0.0, True, starved, 0, "trivial")

    red = _reduce(bits, active)
    nb = red.bits / red.scale
    counts = red.counts
    k_count, t_count = nb.shape

    ub_count = count_bound(nb, counts)
    root_v, root_x = _lp_relaxation(nb, counts, np.zeros_like(nb), np.where(nb > 0, counts[None, :], 0).astype(float))
    inc = _improve(nb, _round_counts(nb, counts, root_x), counts)
    if warm_start is not None:
        ws = _improve(nb, _counts_of(red, np.asarray(warm_start.assign)), counts)
        if np.min((nb * ws).sum(axis=1)) > np.min((nb * inc).sum(axis=1)):
            inc = ws

    if method == "auto":
        method = "bnb" if k_count * t_count <= 48 else "highs"
    bound_trace = [] if trace else None
    nodes = 0
    if node_limit == 0:
        xi, v = inc, float(np.min((nb * inc).sum(axis=1)))
        ub = min(ub_count, root_v)
        method = "rounding"
    elif method == "bnb":
        xi, v, ub, nodes, _ = _branch_and_bound(nb, counts, inc, rel_gap, node_limit, lp_backend, bound_trace)
    elif method == "highs":
        inc_v = float(np.min((nb * inc).sum(axis=1)))
        ub = min(ub_count, root_v)
        xi, v = inc, inc_v
        if inc_v < ub * (1 - rel_gap):
            mx, bound = _milp(nb, counts, inc_v, ub, rel_gap, time_limit, node_limit)
            if bound is not None:
                ub = min(ub, bound)
            if mx is not None:
                mv = float(np.min((nb * mx).sum(axis=1)))
                if mv > inc_v:
                    xi, v = mx, mv
    ub = max(min(ub, ub_count), v)

    assign = _finish(bits, _expand(red, xi, n_slots, k_full))
    r_min = min_served_bits(bits, assign)
    upper = max(ub * red.scale, r_min) if not starved else 0.0
    if starved:
        r_min = 0.0
    gap = 0.0 if upper <= 0 else (upper - r_min) / upper
    return ScheduleResult(
        Schedule(assign), r_min, upper, gap, gap <= rel_gap + 1e-12, starved, nodes, method,
        bound_trace or [],
    )


def benchmark_schedule(scenario, plan):
    """Serve nodes in nearest-first blocks of floor(N / K) consecutive slots.

    At the start of each block the unserved node horizontally closest to the
    UAV is chosen (ties go to the lower index). Leftover slots stay idle.
    """
    xy = np.asarray(plan.xy, dtype=float)
    n_slots, k = len(xy), scenario.k
    if n_slots < k:
        raise ValueError(f"benchmark schedule needs N >= K (N = {n_slots}, K = {k})")
    block = n_slots // k
    assign = np.full(n_slots, IDLE, dtype=int)
    unserved = list(range(k))
    gn = scenario.gn_xy
    for b in range(k):
        start = b * block
        dist = np.hypot(*(gn[unserved] - xy[start]).T)
        j = unserved.pop(int(np.argmin(dist)))
        assign[start:start + block] = j
    return Schedule(assign)
