"""Exact MILP solver: bounded-variable simplex plus branch-and-bound.

The LP core is a dense-tableau simplex over the equality system
[A | I] z = b obtained by adding one slack column per row (inequality
slacks live in [0, inf), equality slacks are pinned to [0, 0]). Cold
starts run the classic two-phase method with artificial columns. Child
nodes of the branch-and-bound tree are re-solved with the dual simplex
warm-started from the parent basis: fixing a binary only moves variable
bounds, which leaves the parent basis dual feasible, and the tableau
matrix itself depends only on the basis, so a cached parent state can be
restored and patched instead of refactorized.

Everything is deterministic: Dantzig pricing with ties broken by lowest
column index, Bland's rule engaged when the objective stalls, best-first
node selection on the LP bound with a stable sequence counter.
"""

import heapq
import itertools
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-7
INT_TOL = 1e-6
GAP_TOL = 1e-6
RCOST_TOL = 1e-9
PIVOT_TOL = 1e-9
REFRESH_EVERY = 64


@dataclass
class LpSolution:
    status: str
    objective: float = np.nan
    x: np.ndarray = None
    duals: np.ndarray = None
    reduced_costs: np.ndarray = None
    active_rows: np.ndarray = None
    iterations: int = 0
    basis: np.ndarray = None
    at_upper: np.ndarray = None


@dataclass
class MilpSolution:
    status: str
    objective: float = np.nan
    x: np.ndarray = None
    active_rows: np.ndarray = None
    node_count: int = 0
    best_bound: float = np.nan
    iterations: int = 0


class SimplexError(RuntimeError):
    pass


class _Tableau:
    """Dense working state for the bounded-variable simplex.

    Columns 0..n-1 are the problem variables, then one slack per row,
    then any phase-1 artificials. `basis` gives the basic column of each
    row; a nonbasic column sits at `up` when `at_upper` else at `lo`.
    """

    def __init__(self, A, senses, b, lo, up):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        m, n = A.shape
        lo = np.asarray(lo, dtype=float)
        up = np.asarray(up, dtype=float)
        if np.any(~np.isfinite(lo) & ~np.isfinite(up)):
            raise NotImplementedError("free variables unsupported; give one finite bound")
        if np.any(lo > up + 1e-12):
            raise ValueError("variable with lo > up")
        senses = list(senses)
        if any(s not in "<=" for s in senses):
            raise ValueError("constraint senses must be '<' or '='")
        self.A = np.concatenate([A, np.eye(m)], axis=1) if m else A.copy()
        slack_up = np.array([np.inf if s == "<" else 0.0 for s in senses])
        self.lo = np.concatenate([lo, np.zeros(m)])
        self.up = np.concatenate([up, slack_up])
        self.b = np.asarray(b, dtype=float).copy()
        self.m, self.n = m, n
        self.basis = np.zeros(0, dtype=int)
        self.at_upper = np.zeros(self.ncols, dtype=bool)
        self.in_basis = np.zeros(self.ncols, dtype=bool)
        self.T = np.zeros((m, self.ncols))
        self.xB = np.zeros(m)
        self.iterations = 0
        self._since_refresh = 0

    @property
    def ncols(self):
        return self.A.shape[1]

    def nonbasic_value(self, j):
        return self.up[j] if self.at_upper[j] else self.lo[j]

    def all_values(self):
        v = np.where(self.at_upper, self.up, self.lo)
        v[self.basis] = self.xB
        return v

    def refresh(self):
        """Recompute tableau and basic values from the basis by LU solve."""
        if self.m == 0:
            self._since_refresh = 0
            return
        B = self.A[:, self.basis]
        try:
            sol = np.linalg.solve(B, np.concatenate([self.A, self.b[:, None]], axis=1))
        except np.linalg.LinAlgError:
            raise SimplexError("singular basis")
        if not np.all(np.isfinite(sol)):
            raise SimplexError("ill-conditioned basis")
        self.T = sol[:, :-1]
        v = np.where(self.at_upper, self.up, self.lo)
        v[self.basis] = 0.0
        self.xB = sol[:, -1] - self.T @ v
        self._since_refresh = 0

    def set_basis(self, basis, at_upper):
        self.basis = np.asarray(basis, dtype=int).copy()
        self.at_upper = np.asarray(at_upper, dtype=bool).copy()
        self.in_basis = np.zeros(self.ncols, dtype=bool)
        self.in_basis[self.basis] = True
        self.refresh()

    def snapshot(self):
        return (
            self.basis.copy(),
            self.at_upper.copy(),
            self.T.copy(),
            self.xB.copy(),
            self.lo.copy(),
            self.up.copy(),
        )

    def restore(self, snap):
        basis, at_upper, T, xB, lo, up = snap
        self.basis = basis.copy()
        self.at_upper = at_upper.copy()
        self.T = T.copy()
        self.xB = xB.copy()
        self.lo = lo.copy()
        self.up = up.copy()
        self.in_basis = np.zeros(self.ncols, dtype=bool)
        self.in_basis[self.basis] = True
        self._since_refresh = 0

    def change_bounds(self, j, new_lo, new_up):
        """Move one variable's bounds, patching basic values if j is nonbasic."""
        if not self.in_basis[j]:
            old = self.nonbasic_value(j)
            self.lo[j] = new_lo
            self.up[j] = new_up
            if self.at_upper[j] and not np.isfinite(new_up):
                self.at_upper[j] = False
            new = self.nonbasic_value(j)
            if new != old:
                self.xB -= self.T[:, j] * (new - old)
        else:
            self.lo[j] = new_lo
            self.up[j] = new_up

    def reduced_costs(self, obj):
        if self.m == 0:
            return obj.copy()
        return obj - obj[self.basis] @ self.T

    def _pivot(self, r, j):
        piv = self.T[r, j]
        if abs(piv) < PIVOT_TOL:
            raise SimplexError("pivot element too small")
        self.T[r] = self.T[r] / piv
        col = self.T[:, j].copy()
        col[r] = 0.0
        row = self.T[r]
        # exact zeros in the pivot row leave their columns untouched, and
        # structured models keep the tableau sparse enough to exploit
        cols = np.nonzero(row != 0.0)[0]
        if 3 * cols.size < 2 * row.size:
            self.T[:, cols] -= np.outer(col, row[cols])
        else:
            self.T -= np.outer(col, row)
        self.T[:, j] = 0.0
        self.T[r, j] = 1.0
        self._since_refresh += 1
        if self._since_refresh >= REFRESH_EVERY:
            self.refresh()

    def _swap(self, r, j, leaving_at_upper, enter_val):
        leaving = self.basis[r]
        self.in_basis[leaving] = False
        self.at_upper[leaving] = leaving_at_upper
        self.basis[r] = j
        self.in_basis[j] = True
        self.xB[r] = enter_val
        self._pivot(r, j)

    def primal(self, obj, max_iter=None):
        """Primal simplex (maximize). Requires primal-feasible basics."""
        m, N = self.m, self.ncols
        if max_iter is None:
            max_iter = 200 * (m + N) + 10_000
        bland = False
        stall = 0
        last_val = -np.inf
        for _ in range(max_iter):
            self.iterations += 1
            movable = self.lo < self.up
            d = self.reduced_costs(obj)
            can_enter = ~self.in_basis & movable & (
                (~self.at_upper & (d > RCOST_TOL)) | (self.at_upper & (d < -RCOST_TOL))
            )
            idx = np.nonzero(can_enter)[0]
            if idx.size == 0:
                return "optimal"
            j = int(idx[0]) if bland else int(idx[np.argmax(np.abs(d[idx]))])
            delta = -1.0 if self.at_upper[j] else 1.0
            col = self.T[:, j]
            alpha = delta * col
            blo = self.lo[self.basis]
            bup = self.up[self.basis]
            t_rows = np.full(m, np.inf)
            dec = alpha > PIVOT_TOL
            inc = alpha < -PIVOT_TOL
            t_rows[dec] = (self.xB[dec] - blo[dec]) / alpha[dec]
            t_rows[inc] = (bup[inc] - self.xB[inc]) / (-alpha[inc])
            t_rows[~np.isfinite(blo) & dec] = np.inf
            t_rows[~np.isfinite(bup) & inc] = np.inf
            t_rows = np.maximum(t_rows, 0.0)
            row_min = t_rows.min() if m else np.inf
            t_flip = self.up[j] - self.lo[j]
            if t_flip <= row_min:
                if not np.isfinite(t_flip):
                    return "unbounded"
                self.xB -= delta * t_flip * col
                self.at_upper[j] = not self.at_upper[j]
            else:
                if not np.isfinite(row_min):
                    return "unbounded"
                tie = np.nonzero(t_rows <= row_min + 1e-12)[0]
                if bland:
                    r = int(tie[np.argmin(self.basis[tie])])
                else:
                    r = int(tie[np.argmax(np.abs(alpha[tie]))])
                tstar = t_rows[r]
                enter_val = self.nonbasic_value(j) + delta * tstar
                self.xB -= delta * tstar * col
                self._swap(r, j, leaving_at_upper=(alpha[r] < 0), enter_val=enter_val)
            val = obj @ self.all_values()
            if val > last_val + 1e-12:
                last_val = val
                stall = 0
            else:
                stall += 1
                if stall > 2 * (m + N):
                    bland = True
        raise SimplexError("primal simplex iteration limit")

    def dual(self, obj, max_iter=None):
        """Dual simplex (maximize). Requires dual-feasible reduced costs."""
        m, N = self.m, self.ncols
        if max_iter is None:
            max_iter = 200 * (m + N) + 10_000
        bland = False
        stall = 0
        last_val = np.inf
        for _ in range(max_iter):
            self.iterations += 1
            movable = self.lo < self.up
            blo = self.lo[self.basis]
            bup = self.up[self.basis]
            viol_lo = np.where(np.isfinite(blo), blo - self.xB, -np.inf)
            viol_up = np.where(np.isfinite(bup), self.xB - bup, -np.inf)
            viol = np.maximum(viol_lo, viol_up)
            if viol.max(initial=-np.inf) <= FEAS_TOL:
                return "optimal"
            if bland:
                cand = np.nonzero(viol > FEAS_TOL)[0]
                r = int(cand[np.argmin(self.basis[cand])])
            else:
                r = int(np.argmax(viol))
            below = viol_lo[r] >= viol_up[r]
            w = self.T[r]
            if below:
                can_enter = ~self.in_basis & movable & (
                    (~self.at_upper & (w < -PIVOT_TOL)) | (self.at_upper & (w > PIVOT_TOL))
                )
            else:
                can_enter = ~self.in_basis & movable & (
                    (~self.at_upper & (w > PIVOT_TOL)) | (self.at_upper & (w < -PIVOT_TOL))
                )
            idx = np.nonzero(can_enter)[0]
            if idx.size == 0:
                return "infeasible"
            d = self.reduced_costs(obj)
            ratios = np.abs(d[idx]) / np.abs(w[idx])
            best = ratios.min()
            tie = np.nonzero(ratios <= best + 1e-12)[0]
            if bland:
                j = int(idx[tie[0]])
            else:
                j = int(idx[tie[np.argmax(np.abs(w[idx][tie]))]])
            target = blo[r] if below else bup[r]
            tau = (self.xB[r] - target) / w[j]
            enter_val = self.nonbasic_value(j) + tau
            self.xB -= tau * self.T[:, j]
            self._swap(r, j, leaving_at_upper=not below, enter_val=enter_val)
            val = obj @ self.all_values()
            if val < last_val - 1e-12:
                last_val = val
                stall = 0
            else:
                stall += 1
                if stall > 2 * (m + N):
                    bland = True
        raise SimplexError("dual simplex iteration limit")

    def primal_feasible(self, tol=FEAS_TOL):
        if self.m == 0:
            return True
        blo = self.lo[self.basis]
        bup = self.up[self.basis]
        lo_ok = ~np.isfinite(blo) | (self.xB >= blo - tol)
        up_ok = ~np.isfinite(bup) | (self.xB <= bup + tol)
        return bool(np.all(lo_ok) and np.all(up_ok))

    def dual_feasible(self, obj, tol=1e-6):
        d = self.reduced_costs(obj)
        movable = self.lo < self.up
        bad = ~self.in_basis & movable & (
            (~self.at_upper & (d > tol)) | (self.at_upper & (d < -tol))
        )
        return not bool(np.any(bad))

    def cold_start(self, obj):
        """Two-phase solve from scratch. Returns optimal/infeasible/unbounded."""
        basis = np.arange(self.n, self.n + self.m)
        at_upper = ~np.isfinite(self.lo)
        at_upper[basis] = False
        v = np.where(at_upper, self.up, self.lo)
        v[basis] = 0.0
        resid = self.b - self.A[:, : self.n] @ v[: self.n] if self.m else np.zeros(0)
        art_rows = []
        art_signs = []
        for i in range(self.m):
            s = self.n + i
            if self.lo[s] - FEAS_TOL <= resid[i] <= self.up[s] + FEAS_TOL:
                continue
            art_rows.append(i)
            art_signs.append(1.0 if resid[i] >= 0 else -1.0)
        k = len(art_rows)
        if k:
            extra = np.zeros((self.m, k))
            for t, (i, sg) in enumerate(zip(art_rows, art_signs)):
                extra[i, t] = sg
            self.A = np.concatenate([self.A, extra], axis=1)
            self.lo = np.concatenate([self.lo, np.zeros(k)])
            self.up = np.concatenate([self.up, np.full(k, np.inf)])
            at_upper = np.concatenate([at_upper, np.zeros(k, dtype=bool)])
            self.T = np.zeros((self.m, self.ncols))
            for t, i in enumerate(art_rows):
                basis[i] = self.n + self.m + t
            obj = np.concatenate([obj, np.zeros(k)])
        self.set_basis(basis, at_upper)
        if k:
            phase1 = np.zeros(self.ncols)
            phase1[self.n + self.m :] = -1.0
            self.primal(phase1)
            if self.all_values()[self.n + self.m :].sum() > 1e-7:
                return "infeasible", obj
            self._drive_out_artificials()
            self.lo[self.n + self.m :] = 0.0
            self.up[self.n + self.m :] = 0.0
            self.refresh()
        return self.primal(obj), obj

    def _drive_out_artificials(self):
        art_start = self.n + self.m
        cols = np.arange(self.ncols)
        for r in range(self.m):
            if self.basis[r] < art_start:
                continue
            row = self.T[r]
            cand = np.nonzero(
                (~self.in_basis) & (cols < art_start) & (np.abs(row) > 1e-7)
            )[0]
            if cand.size:
                j = int(cand[0])
                self._swap(r, j, leaving_at_upper=False, enter_val=self.nonbasic_value(j))


def _extract(tab, obj_full, senses):
    """Final feasibility check plus duals/actives from an optimal tableau."""
    tab.refresh()
    if not tab.primal_feasible(1e-6):
        raise SimplexError("solution fails final feasibility check")
    v = tab.all_values()
    x = v[: tab.n]
    slack_vals = v[tab.n : tab.n + tab.m]
    active = np.array(
        [s == "=" or slack_vals[i] <= 1e-7 for i, s in enumerate(senses)], dtype=bool
    )
    if tab.m:
        B = tab.A[:, tab.basis]
        y = np.linalg.solve(B.T, obj_full[tab.basis])
        d = obj_full - y @ tab.A
    else:
        y = np.zeros(0)
        d = obj_full.copy()
    return x, y, d[: tab.n], active


def solve_lp(c, A, senses, b, lo=None, up=None, maximize=True, obj_const=0.0, warm=None):
    """Solve max (or min) c@x + obj_const s.t. A x (<= | =) b, lo <= x <= up.

    Bounds default to [0, inf). senses is a string or list over rows out
    of '<' (meaning <=) and '='. `warm` is (basis, at_upper) from a prior
    solution of a problem with identical rows/columns (bounds may
    differ); when usable, the dual simplex resumes from it. Status is
    optimal, infeasible or unbounded; solves never raise for those.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        A = A.reshape(0, c.size)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = c.size
    lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float)
    up = np.full(n, np.inf) if up is None else np.asarray(up, dtype=float)
    cmax = c if maximize else -c

    tab = _Tableau(A, senses, b, lo, up)
    obj_full = np.zeros(tab.ncols)
    obj_full[:n] = cmax
    solved = False
    if warm is not None:
        basis, at_upper = warm
        if (
            len(at_upper) == tab.ncols
            and (len(basis) == 0 or max(basis, default=-1) < tab.ncols)
        ):
            try:
                tab.set_basis(basis, at_upper)
                if tab.dual_feasible(obj_full):
                    status = tab.dual(obj_full)
                    if status == "infeasible":
                        return LpSolution(status="infeasible", iterations=tab.iterations)
                    solved = True
                elif tab.primal_feasible():
                    status = tab.primal(obj_full)
                    if status == "unbounded":
                        return LpSolution(status="unbounded", iterations=tab.iterations)
                    solved = True
            except SimplexError:
                tab = _Tableau(A, senses, b, lo, up)
                obj_full = np.zeros(tab.ncols)
                obj_full[:n] = cmax
    if not solved:
        try:
            status, obj_full = tab.cold_start(obj_full)
        except SimplexError:
            # One retry from scratch with Bland from the start would need
            # plumbing; a genuine stall here is a bug worth surfacing.
            raise
        if status in ("infeasible", "unbounded"):
            return LpSolution(status=status, iterations=tab.iterations)
    x, y, d, active = _extract(tab, obj_full, list(senses))
    raw = float(cmax @ x)
    sgn = 1.0 if maximize else -1.0
    return LpSolution(
        status="optimal",
        objective=sgn * raw + obj_const,
        x=x,
        duals=sgn * y,
        reduced_costs=sgn * d,
        active_rows=active,
        iterations=tab.iterations,
        basis=tab.basis.copy(),
        at_upper=tab.at_upper.copy(),
    )


@dataclass
class MilpOptions:
    gap_tol: float = GAP_TOL
    int_tol: float = INT_TOL
    node_limit: int = 200_000
    completion: object = None  # callable: LP point -> feasible point or None
    incumbent_hint: object = None  # known-feasible full assignment to seed pruning
    root_rounding: bool = True
    log: object = None  # text stream
    snapshot_cache: int = 6


def _log(stream, msg):
    if stream is not None:
        stream.write(msg + "\n")


def solve_milp(model, opts=None):
    """Best-first branch-and-bound over the model's binary variables.

    Nodes are ordered by parent LP bound (ties by insertion sequence);
    branching picks the most fractional binary, ties at the lowest
    variable index. Terminates at absolute gap opts.gap_tol, so returned
    objectives are globally optimal to that tolerance. Deterministic.
    """
    opts = opts or MilpOptions()
    maximize, c, obj_const, A, senses, b, lo0, up0, is_bin = model.to_dense()
    sign = 1.0 if maximize else -1.0
    n = c.size
    cmax = c if maximize else -c
    bin_idx = np.nonzero(is_bin)[0]

    tab = _Tableau(A, senses, b, lo0, up0)
    obj_full = np.zeros(tab.ncols)
    obj_full[:n] = cmax
    try:
        status, obj_full = tab.cold_start(obj_full)
    except SimplexError:
        raise
    if status in ("infeasible", "unbounded"):
        return MilpSolution(status=status, node_count=1, iterations=tab.iterations)

    def objective_of(x):
        return float(cmax @ x)

    def check_feasible(x):
        """Max-sense objective of x if feasible in the ROOT model, else None."""
        x = np.asarray(x, dtype=float)
        if x.shape != (n,):
            return None
        if np.any(x < lo0 - 1e-6) or np.any(x > up0 + 1e-6):
            return None
        r = A @ x - b if len(b) else np.zeros(0)
        for i, s in enumerate(senses):
            if s == "<" and r[i] > 1e-6:
                return None
            if s == "=" and abs(r[i]) > 1e-6:
                return None
        if bin_idx.size and np.any(np.abs(x[bin_idx] - np.round(x[bin_idx])) > opts.int_tol):
            return None
        return objective_of(x)

    incumbent = None
    incumbent_obj = -np.inf

    def try_incumbent(x):
        nonlocal incumbent, incumbent_obj
        if x is None:
            return False
        val = check_feasible(x)
        if val is not None and val > incumbent_obj + 1e-12:
            incumbent_obj = val
            incumbent = np.asarray(x, dtype=float).copy()
            return True
        return False

    root_x = tab.all_values()[:n]
    root_bound = objective_of(root_x)
    _log(opts.log, f"root: bound={sign * root_bound + obj_const:.9g}")
    if opts.incumbent_hint is not None:
        try_incumbent(np.asarray(opts.incumbent_hint, dtype=float))
    if opts.completion is not None:
        try_incumbent(opts.completion(root_x.copy()))

    counter = itertools.count()
    cache = OrderedDict()
    extra_iters = 0

    def remember(snap_id, snap):
        cache[snap_id] = snap
        while len(cache) > opts.snapshot_cache:
            cache.popitem(last=False)

    root_id = next(counter)
    root_snap = tab.snapshot()
    root_basis = tab.basis.copy()
    root_at_upper = tab.at_upper.copy()

    if opts.root_rounding and bin_idx.size:
        rounded = np.round(root_x[bin_idx])
        try:
            for j, v in zip(bin_idx, rounded):
                tab.change_bounds(int(j), v, v)
            if tab.dual_feasible(obj_full):
                if tab.dual(obj_full) == "optimal":
                    try_incumbent(tab.all_values()[:n])
        except SimplexError:
            pass
        tab.restore(root_snap)

    # heap entries: (neg parent bound, seq, fixes dict, parent snap id,
    #                parent basis, parent at_upper)
    heap = []
    node_count = 1  # the root counts as a processed node

    def push_children(bound, fixes, snap_id, basis, at_upper, branch_var, toward):
        a = dict(fixes)
        a[branch_var] = toward
        heapq.heappush(heap, (-bound, next(counter), a, snap_id, basis, at_upper))
        bq = dict(fixes)
        bq[branch_var] = 1.0 - toward
        heapq.heappush(heap, (-bound, next(counter), bq, snap_id, basis, at_upper))

    def frac_scores(x):
        xb = x[bin_idx]
        return np.minimum(xb - np.floor(xb), np.ceil(xb) - xb)

    # Handle the root's branching decision.
    scores = frac_scores(root_x) if bin_idx.size else np.array([])
    if not bin_idx.size or scores.max(initial=0.0) <= opts.int_tol:
        try_incumbent(root_x)
        if incumbent is None:
            return MilpSolution(status="infeasible", node_count=1,
                                iterations=tab.iterations)
        obj = sign * incumbent_obj + obj_const
        resid = np.abs(A @ incumbent - b) if len(b) else np.zeros(0)
        active = np.array(
            [s == "=" or resid[i] <= 1e-6 for i, s in enumerate(senses)], dtype=bool
        )
        _log(opts.log, f"done: nodes=1 objective={obj:.9g} status=optimal")
        return MilpSolution(status="optimal", objective=obj, x=incumbent,
                            active_rows=active, node_count=1,
                            best_bound=obj,
                            iterations=tab.iterations + extra_iters)
    pick = int(np.argmax(scores))
    jvar = int(bin_idx[pick])
    toward = 1.0 if root_x[jvar] >= 0.5 else 0.0
    push_children(root_bound, {}, root_id, tab.basis.copy(), tab.at_upper.copy(),
                  jvar, toward)

    status = "optimal"
    # Bounds of nodes pruned by the gap still cap the true optimum, so they
    # must flow into best_bound for it to stay a sound upper bound.
    pruned_max = -np.inf
    while heap:
        neg_bound, _, fixes, snap_id, pbasis, pat_upper = heapq.heappop(heap)
        if -neg_bound <= incumbent_obj + opts.gap_tol:
            pruned_max = max(pruned_max, -neg_bound)
            continue
        if node_count >= opts.node_limit:
            status = "node_limit"
            break
        node_count += 1
        snap = cache.get(snap_id)
        if snap is None and snap_id == root_id:
            snap = root_snap
        node_basis = None
        node_at_upper = None
        node_sid = None
        try:
            if snap is not None:
                tab.restore(snap)
                for j in range(n):
                    want_lo = fixes.get(j, lo0[j])
                    want_up = fixes.get(j, up0[j])
                    if tab.lo[j] != want_lo or tab.up[j] != want_up:
                        tab.change_bounds(j, want_lo, want_up)
            else:
                tab.lo[:n] = lo0
                tab.up[:n] = up0
                for j, v in fixes.items():
                    tab.lo[j] = v
                    tab.up[j] = v
                tab.set_basis(pbasis, pat_upper)
            if not tab.dual_feasible(obj_full):
                raise SimplexError("lost dual feasibility")
            st = tab.dual(obj_full)
            if st == "infeasible":
                continue
            x = tab.all_values()[:n]
            node_basis = tab.basis.copy()
            node_at_upper = tab.at_upper.copy()
        except SimplexError:
            # Numerical trouble on the shared tableau: re-solve this node
            # standalone and let its children warm-start from the root.
            lo = lo0.copy()
            up = up0.copy()
            for j, v in fixes.items():
                lo[j] = v
                up[j] = v
            sol = solve_lp(c, A, senses, b, lo, up, maximize=maximize)
            extra_iters += sol.iterations
            tab.restore(root_snap)
            if sol.status != "optimal":
                continue
            x = sol.x
            node_basis = root_basis
            node_at_upper = root_at_upper
            node_sid = root_id
        bound = objective_of(x)
        _log(opts.log, f"node {node_count}: bound={sign * bound:.9g} "
                       f"incumbent={(sign * incumbent_obj if incumbent is not None else float('nan')):.9g}")
        if bound <= incumbent_obj + opts.gap_tol:
            pruned_max = max(pruned_max, bound)
            continue
        scores = frac_scores(x)
        if scores.max(initial=0.0) <= opts.int_tol:
            try_incumbent(x)
            pruned_max = max(pruned_max, bound)
            continue
        if opts.completion is not None:
            try_incumbent(opts.completion(x.copy()))
            if bound <= incumbent_obj + opts.gap_tol:
                pruned_max = max(pruned_max, bound)
                continue
        free_mask = np.array([int(j) not in fixes for j in bin_idx])
        pick_scores = np.where(free_mask, scores, -1.0)
        pick = int(np.argmax(pick_scores))
        jvar = int(bin_idx[pick])
        toward = 1.0 if x[jvar] >= 0.5 else 0.0
        if node_sid is None:
            node_sid = next(counter)
            remember(node_sid, tab.snapshot())
        push_children(bound, fixes, node_sid, node_basis, node_at_upper,
                      jvar, toward)

    if incumbent is None:
        return MilpSolution(
            status="node_limit" if status == "node_limit" else "infeasible",
            node_count=node_count, iterations=tab.iterations + extra_iters,
        )
    best_bound = max(incumbent_obj, pruned_max)
    if heap:
        best_bound = max(best_bound, max(-h[0] for h in heap))
    resid = np.abs(A @ incumbent - b) if len(b) else np.zeros(0)
    active = np.array(
        [s == "=" or resid[i] <= 1e-6 for i, s in enumerate(senses)], dtype=bool
    )
    _log(opts.log, f"done: nodes={node_count} "
                   f"objective={sign * incumbent_obj + obj_const:.9g} "
                   f"status={status}")
    return MilpSolution(
        status=status,
        objective=sign * incumbent_obj + obj_const,
        x=incumbent,
        active_rows=active,
        node_count=node_count,
        best_bound=sign * best_bound + obj_const,
        iterations=tab.iterations + extra_iters,
    )


def solve_lp_relaxation(model, warm=None):
    """LP relaxation of a model (binaries treated as continuous)."""
    maximize, c, obj_const, A, senses, b, lo, up, _ = model.to_dense()
    return solve_lp(c, A, senses, b, lo, up, maximize=maximize,
                    obj_const=obj_const, warm=warm)


def brute_force_oracle(model, max_binaries=20):
    """Enumerate all binary assignments, solve each LP, return the best.

    Test oracle; refuses more than `max_binaries` free binaries.
    """
    maximize, c, obj_const, A, senses, b, lo0, up0, is_bin = model.to_dense()
    sign = 1.0 if maximize else -1.0
    free = [int(j) for j in np.nonzero(is_bin)[0] if lo0[j] < up0[j]]
    if len(free) > max_binaries:
        raise ValueError(f"too many binaries for brute force: {len(free)}")
    best = None
    best_obj = -np.inf
    any_unbounded = False
    for bits in itertools.product((0.0, 1.0), repeat=len(free)):
        lo, up = lo0.copy(), up0.copy()
        for j, v in zip(free, bits):
            lo[j] = v
            up[j] = v
        sol = solve_lp(c, A, senses, b, lo, up, maximize=maximize, obj_const=obj_const)
        if sol.status == "unbounded":
            any_unbounded = True
            continue
        if sol.status != "optimal":
            continue
        if sign * sol.objective > best_obj + 1e-12:
            best_obj = sign * sol.objective
            best = sol
    if best is None:
        return MilpSolution(status="unbounded" if any_unbounded else "infeasible")
    resid = np.abs(A @ best.x - b) if len(b) else np.zeros(0)
    active = np.array(
        [s == "=" or resid[i] <= 1e-6 for i, s in enumerate(senses)], dtype=bool
    )
    return MilpSolution(
        status="optimal",
        objective=best.objective,
        x=best.x,
        active_rows=active,
        node_count=2 ** len(free),
    )


def origin_in_convex_hull(points, tol=FEAS_TOL):
    """Feasibility LP: is 0 a convex combination of the given row vectors?"""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    k, d = P.shape
    A = np.concatenate([P.T, np.ones((1, k))], axis=0)
    b = np.concatenate([np.zeros(d), [1.0]])
    sol = solve_lp(np.zeros(k), A, "=" * (d + 1), b, lo=np.zeros(k), up=np.ones(k))
    return sol.status == "optimal"
