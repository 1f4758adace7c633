"""Primal log-barrier interior-point solver for smooth convex programs.

Problems have the form::

    maximize    c . x
    subject to  g_i(x) <= 0      (smooth, convex)
                lo <= x <= hi

Constraints arrive in blocks that return their values and a sparse
Jacobian, plus optionally the weighted Hessian sum_i w_i H_i. A block whose
rows touch many variables (an energy budget or a per-node rate sum) can be
flagged ``coupling``; its rank-one barrier curvature is then kept as a
low-rank factor instead of being formed densely. When the remaining
curvature is banded after a reverse Cuthill-McKee ordering, each Newton step
is a banded Cholesky solve plus a Woodbury correction for the coupling
rows; otherwise it falls back to a sparse LU of the augmented system.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)

EXP2_CLAMP = 60.0
_ROUNDOFF = 1e-12
_DENSE_LIMIT = 150  # below this many variables a dense Newton solve is faster
_MAX_BAND = 40


def exp2_clamped(s):
    """2**s evaluated as exp(s ln 2) with s clamped to [-60, 60]."""
    s = np.asarray(s, dtype=float)
    if np.any(np.abs(s) > EXP2_CLAMP):
        log.debug("clamping %d exponent(s) to +-%g", int(np.sum(np.abs(s) > EXP2_CLAMP)), EXP2_CLAMP)
    return np.exp(np.clip(s, -EXP2_CLAMP, EXP2_CLAMP) * math.log(2.0))


@dataclass
class ConstraintBlock:
    """A family of constraints g(x) <= 0.

    ``fun(x)`` returns the values g, shape (m,). ``jac(x)`` returns the
    (m, n) Jacobian and ``hess(x, w)`` the (n, n) matrix sum_i w_i Hess
    g_i(x); either may be a scipy sparse matrix, a dense array or a COO
    triplet ``(rows, cols, vals)`` with repeated entries summed. Leave
    ``hess`` None for affine blocks.
    """

    name: str
    fun: Callable
    jac: Callable
    hess: Callable | None = None
    coupling: bool = False


def linear_block(name, a, b, coupling=False):
    """Affine constraints A x - b <= 0."""
    a = sp.csr_matrix(a)
    b = np.asarray(b, dtype=float)
    coo = a.tocoo()
    trip = (coo.row, coo.col, coo.data)
    return ConstraintBlock(name, lambda x: a @ x - b, lambda x: trip, None, coupling)


def _triplet(m):
    if isinstance(m, tuple):
        return tuple(np.asarray(v) for v in m)
    if sp.issparse(m):
        coo = m.tocoo()
        return coo.row, coo.col, coo.data
    m = np.atleast_2d(np.asarray(m, dtype=float))
    r, c = np.nonzero(m)
    return r, c, m[r, c]


@dataclass
class ConvexProgram:
    n_vars: int
    objective: np.ndarray
    constraints: list = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.objective.shape != (self.n_vars,):
            raise ValueError("objective length must equal n_vars")
        lo = np.full(self.n_vars, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        hi = np.full(self.n_vars, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if np.any(lo >= hi):
            raise ValueError("empty box: some lower bound is not below its upper bound")
        self.lower, self.upper = lo, hi

    def evaluate(self, x):
        """Constraint values per block, as a dict name -> array."""
        return {blk.name: blk.fun(x) for blk in self.constraints}

    def max_violation(self, x):
        worst = 0.0
        for blk in self.constraints:
            g = blk.fun(x)
            if g.size:
                worst = max(worst, float(np.max(g)))
        box = max(float(np.max(self.lower - x, initial=-np.inf)), float(np.max(x - self.upper, initial=-np.inf)))
        return max(worst, box)


@dataclass
class SolveOptions:
    mu: float = 10.0
    t0: float | None = 1.0  # None picks the t that best centers the start
    gap_tol: float = 1e-7
    newton_tol: float = 1e-9
    alpha: float = 0.25
    beta: float = 0.5
    max_newton: int = 200
    max_outer: int = 60
    feasibility_tol: float = 1e-8
    kkt_tol: float = 1e-5
    phase1_margin: float = 1e-7
    regularization: float = 1e-12


@dataclass
class SolveResult:
    x_star: np.ndarray
    objective_value: float
    status: str
    kkt_residual: float
    barrier_iters: int
    newton_iters: int = 0
    objective_history: list = field(default_factory=list)
    diagnosis: str = ""


class _Barrier:
    """Barrier value, gradient and Newton system for one program."""

    def __init__(self, prog, opts):
        self.prog = prog
        self.opts = opts
        self.has_lo = np.isfinite(prog.lower)
        self.has_hi = np.isfinite(prog.upper)
        self._order = None  # (pattern size, permutation) of the banded ordering

    def interior(self, x):
        p = self.prog
        if np.any(x[self.has_lo] <= p.lower[self.has_lo]) or np.any(x[self.has_hi] >= p.upper[self.has_hi]):
            return False, None
        evals = []
        for blk in p.constraints:
            g = blk.fun(x)
            if not np.all(np.isfinite(g)) or np.any(g >= 0):
                return False, None
            evals.append(g)
        return True, evals

    def value(self, x, t, evals):
        p = self.prog
        v = -t * float(p.objective @ x)
        for g in evals:
            v -= float(np.sum(np.log(-g)))
        v -= float(np.sum(np.log(x[self.has_lo] - p.lower[self.has_lo])))
        v -= float(np.sum(np.log(p.upper[self.has_hi] - x[self.has_hi])))
        return v

    def newton_step(self, x, t, evals):
        p = self.prog
        n = p.n_vars
        lo_gap = np.where(self.has_lo, x - p.lower, np.inf)
        hi_gap = np.where(self.has_hi, p.upper - x, np.inf)
        grad = -t * p.objective - 1.0 / lo_gap + 1.0 / hi_gap
        diag = 1.0 / lo_gap**2 + 1.0 / hi_gap**2
        # barrier curvature: sum_i (grad g_i grad g_i^T) / g_i^2 + Hess g_i / (-g_i)
        loc_r, loc_c, loc_v = [], [], []
        cpl_r, cpl_c, cpl_v = [], [], []
        hr, hc, hv = [], [], []
        row0 = cpl0 = 0
        for blk, g in zip(p.constraints, evals):
            inv = 1.0 / (-g)
            r, c, v = _triplet(blk.jac(x))
            grad = grad + np.bincount(c, weights=v * inv[r], minlength=n)
            if blk.coupling:
                cpl_r.append(r + cpl0)
                cpl_c.append(c)
                cpl_v.append(v * inv[r])
                cpl0 += len(g)
            else:
                loc_r.append(r + row0)
                loc_c.append(c)
                loc_v.append(v * inv[r])
                row0 += len(g)
            if blk.hess is not None:
                r2, c2, v2 = _triplet(blk.hess(x, inv))
                hr.append(r2)
                hc.append(c2)
                hv.append(v2)
        idx = np.arange(n)
        hr.append(idx)
        hc.append(idx)
        hv.append(diag)
        hr, hc, hv = np.concatenate(hr), np.concatenate(hc), np.concatenate(hv)
        # every scaled constraint row w_i = grad g_i / |g_i| contributes w_i w_i^T
        wr = np.concatenate(loc_r + [r + row0 for r in cpl_r]).astype(int)
        wc = np.concatenate(loc_c + cpl_c).astype(int)
        wv = np.concatenate(loc_v + cpl_v)
        m = row0 + cpl0
        scale = max(1.0, float(np.max(np.abs(diag), initial=0.0)))
        if n <= _DENSE_LIMIT:
            hd = np.zeros((n, n))
            np.add.at(hd, (hr, hc), hv)
            w = np.zeros((m, n))
            np.add.at(w, (wr, wc), wv)
            hd += w.T @ w
            hd[idx, idx] += self.opts.regularization * max(scale, float(np.max(np.abs(np.diag(hd)))))
            return np.linalg.solve(hd, -grad), grad
        reg = self.opts.regularization * scale
        nloc = sum(len(r) for r in loc_r)
        dx = self._banded_step(n, grad, hr, hc, hv, wr[:nloc], wc[:nloc], wv[:nloc],
                               wr[nloc:] - row0, wc[nloc:], wv[nloc:], cpl0, reg)
        if dx is None:
            # augmented system [[H, W^T], [W, -I]] [dx; z] = [-grad; 0] eliminates to (H + W^T W) dx = -grad
            rows = np.concatenate([hr, idx, n + wr, wc, n + np.arange(m)])
            cols = np.concatenate([hc, idx, wc, n + wr, n + np.arange(m)])
            vals = np.concatenate([hv, np.full(n, reg), wv, wv, -np.ones(m)])
            kkt = sp.csc_matrix((vals, (rows, cols)), shape=(n + m, n + m))
            dx = splu(kkt).solve(np.concatenate([-grad, np.zeros(m)]))[:n]
        return dx, grad

    def _banded_step(self, n, grad, hr, hc, hv, lr, lc, lv, ur, uc, uv, mc, reg):
        """Solve (H + L^T L + U^T U) dx = -grad with H + L^T L banded; None if it is not."""
        pr, pc, pv = _row_products(lr, lc, lv)
        rows = np.concatenate([hr, pr, np.arange(n)])
        cols = np.concatenate([hc, pc, np.arange(n)])
        vals = np.concatenate([hv, pv, np.full(n, reg)])
        if self._order is None or self._order[0] != len(rows):
            pattern = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
            perm = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True))
            self._order = (len(rows), perm, np.argsort(perm))
        _, perm, rank = self._order
        pi, pj = rank[rows], rank[cols]
        upper = pi <= pj
        pi, pj, vals = pi[upper], pj[upper], vals[upper]
        u = int(np.max(pj - pi))
        if u > _MAX_BAND:
            return None
        ab = np.bincount((u + pi - pj) * n + pj, weights=vals, minlength=(u + 1) * n).reshape(u + 1, n)
        ud = np.zeros((mc, n))
        np.add.at(ud, (ur, rank[uc]), uv)
        # columns curved only by the coupling rows (an epigraph variable, say) would make the
        # banded part near singular; boost them there and take the boost back out exactly below
        colsq = np.einsum("ij,ij->j", ud, ud)
        weak = np.nonzero(ab[u] < 1e-8 * colsq)[0]
        ab[u, weak] += colsq[weak]
        try:
            chol = cholesky_banded(ab, lower=False, check_finite=False)
        except LinAlgError:
            return None
        rhs = -grad[perm]
        if mc == 0:
            dxp = cho_solve_banded((chol, False), rhs, check_finite=False)
        else:
            # (A + V^T S V) dx = rhs with V = [U; e_weak], S = diag(1, -boost)
            v = np.zeros((mc + len(weak), n))
            v[:mc] = ud
            v[mc + np.arange(len(weak)), weak] = 1.0
            sig = np.concatenate([np.ones(mc), -colsq[weak]])
            sol = cho_solve_banded((chol, False), np.column_stack([rhs, v.T]), check_finite=False)
            z0, z = sol[:, 0], sol[:, 1:]
            small = np.eye(len(sig)) + sig[:, None] * (v @ z)
            dxp = z0 - z @ np.linalg.solve(small, sig * (v @ z0))
        dx = np.empty(n)
        dx[perm] = dxp
        return dx


def _row_products(r, c, v):
    """Triplets of W^T W for a sparse W given as row-sorted-or-not triplets."""
    if len(r) == 0:
        return r, c, v
    o = np.argsort(r, kind="stable")
    r, c, v = r[o], c[o], v[o]
    pr, pc, pv = [c], [c], [v * v]
    k = 1
    while k < len(r):
        a = np.nonzero(r[k:] == r[:-k])[0]
        if len(a) == 0:
            break
        b = a + k
        pr += [c[a], c[b]]
        pc += [c[b], c[a]]
        pv += [v[a] * v[b]] * 2
        k += 1
    return np.concatenate(pr), np.concatenate(pc), np.concatenate(pv)


def _centering(bar, x, t, evals, opts, counter):
    """Damped Newton on the barrier function at parameter t.

    Returns the new point, its constraint evaluations, the last Newton
    decrement and whether centering converged.
    """
    decrement = math.inf
    for _ in range(opts.max_newton):
        try:
            dx, grad = bar.newton_step(x, t, evals)
        except (RuntimeError, np.linalg.LinAlgError):
            log.debug("singular Newton system; stopping centering")
            return x, evals, decrement, False
        counter[0] += 1
        slope = float(grad @ dx)
        decrement = math.sqrt(max(-slope, 0.0)) if np.isfinite(slope) else math.inf
        f0 = bar.value(x, t, evals)
        # below this the Armijo test only sees roundoff in the barrier value
        floor = max(opts.newton_tol, _ROUNDOFF * abs(f0))
        if not np.isfinite(slope) or -slope / 2.0 <= floor:
            return x, evals, decrement, True
        step = 1.0
        accepted = False
        for _ in range(80):
            xn = x + step * dx
            ok, ev = bar.interior(xn)
            if ok and bar.value(xn, t, ev) <= f0 + opts.alpha * step * slope:
                accepted = True
                break
            step *= opts.beta
        if not accepted:
            return x, evals, decrement, True
        x, evals = xn, ev
    return x, evals, decrement, False


def _auto_t0(bar, x, evals):
    """t minimizing the Newton decrement at x; the barrier Hessian does not depend on t."""
    try:
        d0, _ = bar.newton_step(x, 0.0, evals)
        d1, _ = bar.newton_step(x, 1.0, evals)
    except (RuntimeError, np.linalg.LinAlgError):
        return 1.0
    c = bar.prog.objective
    den = float(c @ (d0 - d1))
    t = float(c @ d0) / den if den > 0 else 1.0
    return t if np.isfinite(t) and t >= 1.0 else 1.0


def _barrier_loop(prog, x0, opts, stop=None):
    bar = _Barrier(prog, opts)
    ok, evals = bar.interior(x0)
    if not ok:
        raise ValueError("starting point is not strictly feasible")
    m = sum(len(g) for g in evals) + int(bar.has_lo.sum()) + int(bar.has_hi.sum())
    x = x0
    t = opts.t0 if opts.t0 is not None else _auto_t0(bar, x0, evals)
    counter = [0]
    history = []  # objective after each centering, i.e. along the central path
    outer = 0
    status = "max_iter"
    decrement = math.inf
    while outer < opts.max_outer:
        x, evals, decrement, centered = _centering(bar, x, t, evals, opts, counter)
        outer += 1
        history.append(float(prog.objective @ x))
        if stop is not None and stop(x):
            status = "stopped"
            break
        scale = max(1.0, abs(history[-1]))
        if m / t <= opts.gap_tol * scale:
            status = "optimal" if centered else "max_iter"
            break
        t *= opts.mu
    # stationarity residual of the Lagrangian with duals 1/(-t g_i),
    # measured in the dual norm of the barrier Hessian
    kkt = decrement / t
    return x, status, kkt, outer, counter[0], history


def _phase1(prog, x0, opts):
    """Find a strictly feasible point by minimizing a shared slack."""
    n = prog.n_vars
    lo, hi = prog.lower, prog.upper
    width = np.where(np.isfinite(lo) & np.isfinite(hi), hi - lo, np.inf)
    pad = np.minimum(1e-3 * np.where(np.isfinite(width), width, 1.0), 1e-3)
    x = np.clip(np.asarray(x0, dtype=float), lo + pad, hi - pad)
    worst = max((float(np.max(blk.fun(x), initial=-np.inf)) for blk in prog.constraints), default=-np.inf)
    if worst < 0:
        return x, -worst, ""
    sigma0 = worst + 1.0
    floor = -1.0

    def wrap(blk):
        def jac(z):
            r, c, v = _triplet(blk.jac(z[:n]))
            m = len(blk.fun(z[:n]))
            rows = np.arange(m)
            return (np.concatenate([r, rows]), np.concatenate([c, np.full(m, n)]),
                    np.concatenate([v, -np.ones(m)]))

        hess = None
        if blk.hess is not None:
            def hess(z, w):
                return _triplet(blk.hess(z[:n], w))

        return ConstraintBlock(blk.name, lambda z: blk.fun(z[:n]) - z[n], jac, hess, blk.coupling)

    obj = np.zeros(n + 1)
    obj[n] = -1.0
    aux = ConvexProgram(
        n + 1, obj, [wrap(b) for b in prog.constraints],
        np.append(lo, floor), np.append(hi, np.inf),
    )
    z0 = np.append(x, sigma0)
    aux_opts = SolveOptions(**{**opts.__dict__, "gap_tol": 1e-9})
    z, _, _, _, _, _ = _barrier_loop(aux, z0, aux_opts, stop=lambda z: z[n] < -opts.phase1_margin)
    if z[n] < 0:
        return z[:n], -z[n], ""
    # locate the block that stays violated at the best slack point
    worst_name, worst_val = "", -np.inf
    for blk in prog.constraints:
        g = blk.fun(z[:n])
        if g.size and float(np.max(g)) > worst_val:
            worst_name, worst_val = blk.name, float(np.max(g))
    return None, float(z[n]), f"constraint block '{worst_name}' violated by {worst_val:.3g}"


def solve(prog, x0, opts=None):
    """Maximize ``prog.objective . x`` over the feasible set, starting from ``x0``.

    If ``x0`` is not strictly feasible a phase-I problem is solved first;
    when that fails the result has status ``infeasible`` and names the
    constraint block that could not be satisfied.
    """
    opts = opts or SolveOptions()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (prog.n_vars,):
        raise ValueError("x0 has the wrong length")
    bar = _Barrier(prog, opts)
    ok, _ = bar.interior(x0)
    if not ok:
        x1, _, why = _phase1(prog, x0, opts)
        if x1 is None:
            return SolveResult(x0, float(prog.objective @ x0), "infeasible", math.inf, 0, diagnosis=why)
        x0 = x1
    x, status, kkt, outer, newton, history = _barrier_loop(prog, x0, opts)
    if status == "optimal" and kkt > opts.kkt_tol * max(1.0, float(np.max(np.abs(prog.objective)))):
        status = "max_iter"
    return SolveResult(x, float(prog.objective @ x), status, kkt, outer, newton, history)
