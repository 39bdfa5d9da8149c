"""Exact certification of the Lyapunov decrease condition.

The core quantity is the worst violation over a region,

    gamma* = max_x  V(f(x, pi(x))) - (1 - eps) V(x),

computed as one MILP. gamma* <= certify_tol proves the decrease condition
everywhere in the region. Both the box form and the sublevel-set form
(restricted to V(x) <= r inside its bounding box, with an optional
excluded ball around the equilibrium) are supported.

The solver is seeded with sampled candidate states, and every
branch-and-bound node completes its LP relaxation point into a true
feasible assignment by replaying the network forward pass, which keeps
the incumbent tight while the bound closes from above. Certification
uses the proved upper bound, never just the best point found.
"""

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .lyapunov import eval_lyapunov, level_bounding_box
from .milp import (
    MilpModel,
    ReluEncoding,
    encode_abs_l1,
    encode_clamp,
    encode_leaky_relu,
    encode_linf,
    encode_network,
    propagate_bounds,
)
from .pwl import Box, DimensionError
from .solver import MilpOptions, solve_milp

CERTIFY_TOL = 1e-6


@dataclass
class VerifyReport:
    certified: bool
    gamma_star: float
    counterexample: object  # state vector, present iff not certified
    stats: dict = field(default_factory=dict)

    def __bool__(self):
        return self.certified


@dataclass
class PolicyEncoding:
    policy: object
    net_enc: object
    shift_vars: list
    clamps: list
    u_vars: list

    def complete(self, x, out):
        raw = self.policy.preclamp(x)
        self.net_enc.complete(x, out)
        for k, sv in enumerate(self.shift_vars):
            out[sv] = raw[k]
            self.clamps[k].complete(raw[k], out)
        return np.clip(raw, self.policy.u_min, self.policy.u_max)


def encode_policy(m, policy, x_vars, box, prefix="pi", bound_method="interval"):
    """Clamped policy output variables for states in `box`."""
    nb = propagate_bounds(policy.net, box, method=bound_method)
    raw, net_enc = encode_network(m, policy.net, x_vars, nb, prefix=f"{prefix}n")
    olo, oup = nb.output
    shift_vars, clamps, u_vars = [], [], []
    for k in range(policy.n_u):
        shift = policy.u_eq[k] - policy.phi_eq[k]
        slo, sup = olo[k] + shift, oup[k] + shift
        sv = m.add_var(f"{prefix}_s{k}", slo, sup)
        m.add_constraint({sv: 1.0, raw[k]: -1.0}, "=", shift,
                         name=f"{prefix}_s{k}_eq",
                         rhs_prov=("mixed", "u_eq-phi_eq", k))
        uc, cenc = encode_clamp(m, sv, policy.u_min[k], policy.u_max[k],
                                (slo, sup), prefix=f"{prefix}_c{k}")
        shift_vars.append(sv)
        clamps.append(cenc)
        u_vars.append(uc)
    return u_vars, PolicyEncoding(policy, net_enc, shift_vars, clamps, u_vars)


@dataclass
class DynamicsEncoding:
    dyn: object
    net_enc: object
    xnext_vars: list
    step_bounds: object = None  # (lo, up) arrays for x+ - x, residual models

    def complete(self, x, u, out):
        self.net_enc.complete(np.concatenate([x, u]), out)
        xn = self.dyn.step(x, u)
        for d, var in enumerate(self.xnext_vars):
            out[var] = xn[d]
        return xn


def encode_dynamics(m, dyn, x_vars, u_vars, box, prefix="f",
                    bound_method="interval"):
    """Successor-state variables for one model step.

    Residual models yield x+ = x + phi(x,u) - phi_eq; the network output
    interval then bounds the step x+ - x directly, and that interval is
    reported in the encoding for difference cuts downstream.
    """
    u_lo = np.array([m.lo[v] for v in u_vars])
    u_up = np.array([m.up[v] for v in u_vars])
    xu_box = Box(np.concatenate([box.lower, u_lo]),
                 np.concatenate([box.upper, u_up]))
    nb = propagate_bounds(dyn.net, xu_box, method=bound_method)
    raw, net_enc = encode_network(m, dyn.net, list(x_vars) + list(u_vars), nb,
                                  prefix=f"{prefix}n")
    olo, oup = nb.output
    xnext = []
    step_bounds = None
    if dyn.residual:
        step_lo, step_up = olo - dyn.phi_eq, oup - dyn.phi_eq
        step_bounds = (step_lo, step_up)
        for d in range(dyn.n_x):
            shift = -dyn.phi_eq[d]
            xv = m.add_var(f"{prefix}_x{d}",
                           box.lower[d] + step_lo[d],
                           box.upper[d] + step_up[d])
            m.add_constraint({xv: 1.0, raw[d]: -1.0, x_vars[d]: -1.0}, "=",
                             shift, name=f"{prefix}_x{d}_eq",
                             rhs_prov=("mixed", "-phi_eq", d))
            xnext.append(xv)
    else:
        for d in range(dyn.n_x):
            shift = dyn.x_eq[d] - dyn.phi_eq[d]
            xv = m.add_var(f"{prefix}_x{d}", olo[d] + shift, oup[d] + shift)
            m.add_constraint({xv: 1.0, raw[d]: -1.0}, "=", shift,
                             name=f"{prefix}_x{d}_eq",
                             rhs_prov=("mixed", "x_eq-phi_eq", d))
            xnext.append(xv)
    return xnext, DynamicsEncoding(dyn, net_enc, xnext, step_bounds)


@dataclass
class LyapunovEncoding:
    V: object
    x_vars: list
    y_vars: list  # per layer, per unit
    kinks: list  # per layer, per unit, per kink: ReluEncoding
    out_vars: list  # per non-final layer
    l1: object
    terms: dict

    def complete(self, x, out):
        x = np.asarray(x, dtype=float)
        for d, var in enumerate(self.x_vars):
            out[var] = x[d]
        cur = x - self.V.x_eq
        for li, layer in enumerate(self.V.layers):
            vals = np.zeros(layer.output_dim)
            ui = 0
            for j, v, c, unit in layer.units_flat():
                y = float(v @ cur)
                out[self.y_vars[li][ui]] = y
                for enc in self.kinks[li][ui]:
                    enc.complete(y, out)
                vals[j] += c * unit(y)
                ui += 1
            if li < len(self.V.layers) - 1:
                for j, var in enumerate(self.out_vars[li]):
                    out[var] = vals[j]
            cur = vals
        if self.l1 is not None:
            self.l1.complete(x, out)
        return out

    def value(self, assignment):
        return float(sum(assignment[v] * c for v, c in self.terms.items()))


def _concave_env_pieces(ys, vals):
    """Linear pieces (slope, intercept) of the upper concave hull of the
    points (ys, vals), each valid as a global over-estimator of the hull."""
    pts = sorted(zip(ys, vals))
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, v1), (x2, v2) = hull[-2], hull[-1]
            # drop the middle point when it sits on or below the chord
            if (v2 - v1) * (p[0] - x1) <= (p[1] - v1) * (x2 - x1) + 1e-15:
                hull.pop()
            else:
                break
        if hull and abs(p[0] - hull[-1][0]) < 1e-12:
            continue
        hull.append(p)
    pieces = []
    for (x1, v1), (x2, v2) in zip(hull[:-1], hull[1:]):
        s = (v2 - v1) / (x2 - x1)
        pieces.append((s, v1 - s * x1))
    return pieces


def encode_lyapunov(m, V, x_vars, box, prefix="v"):
    """Linear terms whose weighted sum equals V(x) for x in `box`.

    Returns (terms, encoding): terms maps variable index to coefficient,
    so objectives and level constraints are assembled without an extra
    variable per evaluation.

    Each unit also gets the rows of its concave envelope over the input
    interval. All kinks of a unit share one scalar input, so these rows
    are valid and make the LP relaxation exact on the maximized side,
    which is what lets branch-and-bound close the bound without
    enumerating the kink binaries.
    """
    if box.dim != V.n_x or len(x_vars) != V.n_x:
        raise DimensionError("box/x_vars do not match the candidate dimension")
    terms = {}
    y_vars_all, kinks_all, out_vars_all = [], [], []
    cur_vars = list(x_vars)
    cur_off = V.x_eq  # input offset: first layer sees x - x_eq
    cur_lo = box.lower - V.x_eq
    cur_up = box.upper - V.x_eq
    last = len(V.layers) - 1
    for li, layer in enumerate(V.layers):
        y_vars, kinks = [], []
        out_lo = np.zeros(layer.output_dim)
        out_up = np.zeros(layer.output_dim)
        layer_terms = [dict() for _ in range(layer.output_dim)]
        ui = 0
        for j, v, c, unit in layer.units_flat():
            vp = np.maximum(v, 0.0)
            vn = np.minimum(v, 0.0)
            ylo = float(vp @ cur_lo + vn @ cur_up)
            yup = float(vp @ cur_up + vn @ cur_lo)
            y = m.add_var(f"{prefix}_y{li}_{ui}", ylo, yup)
            coeffs = {cur_vars[d]: -v[d] for d in range(v.size)}
            coeffs[y] = 1.0
            prov = {cur_vars[d]: ("param", "dir", li, ui, d) for d in range(v.size)}
            m.add_constraint(coeffs, "=", -float(v @ cur_off),
                             name=f"{prefix}_y{li}_{ui}_eq", prov=prov,
                             rhs_prov=("mixed", "dir.offset", li, ui))
            unit_kinks = []
            for kk in range(unit.order):
                bk = float(unit.b[kk])
                z, beta = encode_leaky_relu(
                    m, y, (ylo - bk, yup - bk), 0.0,
                    name=f"{prefix}_z{li}_{ui}_{kk}", offset=bk,
                )
                unit_kinks.append(
                    ReluEncoding(y, z, -1 if beta is None else beta, 0.0,
                                 (ylo - bk, yup - bk), offset=bk)
                )
                layer_terms[j][z] = layer_terms[j].get(z, 0.0) + c * float(unit.a[kk])
            if yup - ylo > 1e-12:
                ys = [ylo] + [float(bk) for bk in unit.b if ylo < bk < yup] + [yup]
                vals = [float(unit(yy)) for yy in ys]
                zsum = {enc.z: float(ak)
                        for enc, ak in zip(unit_kinks, unit.a)}
                for pi, (s, q) in enumerate(_concave_env_pieces(ys, vals)):
                    row = dict(zsum)
                    row[y] = row.get(y, 0.0) - s
                    m.add_constraint(row, "<", q,
                                     name=f"{prefix}_env{li}_{ui}_u{pi}")
                neg = _concave_env_pieces(ys, [-vv for vv in vals])
                for pi, (s, q) in enumerate(neg):
                    row = dict(zsum)
                    row[y] = row.get(y, 0.0) + s
                    m.add_constraint(row, ">", -q,
                                     name=f"{prefix}_env{li}_{ui}_l{pi}")
            out_lo[j] += c * float(unit(ylo))
            out_up[j] += c * float(unit(yup))
            y_vars.append(y)
            kinks.append(unit_kinks)
            ui += 1
        y_vars_all.append(y_vars)
        kinks_all.append(kinks)
        if li == last:
            terms = layer_terms[0]
            break
        outs = []
        for j in range(layer.output_dim):
            ov = m.add_var(f"{prefix}_o{li}_{j}", out_lo[j], out_up[j])
            coeffs = {z: -cc for z, cc in layer_terms[j].items()}
            coeffs[ov] = 1.0
            m.add_constraint(coeffs, "=", 0.0, name=f"{prefix}_o{li}_{j}_eq",
                             prov={z: ("mixed", "c.a", li, j) for z in layer_terms[j]})
            outs.append(ov)
        out_vars_all.append(outs)
        cur_vars = outs
        cur_off = np.zeros(layer.output_dim)
        cur_lo, cur_up = out_lo, out_up
    l1_enc = None
    if V.lam > 0:
        l1, l1_enc = encode_abs_l1(m, V.R, x_vars, V.x_eq, box,
                                   prefix=f"{prefix}_l1")
        terms = dict(terms)
        terms[l1] = V.lam
    return terms, LyapunovEncoding(V, list(x_vars), y_vars_all, kinks_all,
                                   out_vars_all, l1_enc, terms)


def _step_difference_cuts(m, V, venc_x, venc_n, step_bounds):
    """Rows capping first-layer unit values at x+ against the same unit at x.

    Residual dynamics bound the step x+ - x inside a small box, and every
    unit is monotone with slope at most its largest kink prefix sum, so
    unit(v'(x+ - x_eq)) - unit(v'(x - x_eq)) <= s_max * max(v'(x+ - x), 0)
    and symmetrically with the roles of x and x+ swapped. Without these
    rows the two Lyapunov encodings only meet through the network big-M
    rows, and the relaxation can hold one copy at its upper envelope and
    the other at its lower one; with them, fixing the kinks of one side
    pins the other to within one model step.
    """
    step_lo, step_up = step_bounds
    layer = V.layers[0]
    ui = 0
    for j, v, c, unit in layer.units_flat():
        vp = np.maximum(v, 0.0)
        vm = np.minimum(v, 0.0)
        dup = float(vp @ step_up + vm @ step_lo)
        dlo = float(vp @ step_lo + vm @ step_up)
        s_max = float(np.max(np.cumsum(unit.a)))
        row = {}
        for enc, ak in zip(venc_n.kinks[0][ui], unit.a):
            row[enc.z] = row.get(enc.z, 0.0) + float(ak)
        for enc, ak in zip(venc_x.kinks[0][ui], unit.a):
            row[enc.z] = row.get(enc.z, 0.0) - float(ak)
        m.add_constraint(row, "<", s_max * max(dup, 0.0),
                         name=f"stepcut_u{ui}")
        m.add_constraint({z: -cc for z, cc in row.items()}, "<",
                         s_max * max(-dlo, 0.0), name=f"stepcut_d{ui}")
        ui += 1
    if venc_x.l1 is not None and venc_n.l1 is not None:
        amax = np.maximum(np.abs(step_lo), np.abs(step_up))
        cap = float(np.sum(np.abs(np.atleast_2d(V.R)) @ amax))
        m.add_constraint({venc_n.l1.total: 1.0, venc_x.l1.total: -1.0},
                         "<", cap, name="stepcut_l1")
        m.add_constraint({venc_x.l1.total: 1.0, venc_n.l1.total: -1.0},
                         "<", cap, name="stepcut_l1r")


def _gamma_direct(dyn, policy, V, x):
    """V(f(x, pi(x))) - (1 - eps) V(x) without the eps factor split out."""
    u = policy.act(x)
    xn = dyn.step(x, u)
    return eval_lyapunov(V, xn), eval_lyapunov(V, x), u, xn


def _check_setup(dyn, policy, V, eps):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0,1), got {eps}")
    if not (np.array_equal(dyn.x_eq, policy.x_eq)
            and np.array_equal(dyn.x_eq, V.x_eq)):
        raise ValueError("dynamics, policy and candidate disagree on x_eq")


def _sample_states(region, x_eq, count, rng):
    """Deterministic candidate states: corners, axis points, uniform fill."""
    pts = [region.center, x_eq]
    n = region.dim
    if n <= 4:
        for mask in range(2 ** n):
            corner = np.where(
                [(mask >> d) & 1 for d in range(n)], region.upper, region.lower
            )
            pts.append(corner.astype(float))
    half = region.half_width
    for d in range(n):
        for s in (-1.0, 1.0):
            p = region.center.copy()
            p[d] += s * half[d]
            pts.append(p)
    while len(pts) < count:
        pts.append(rng.uniform(region.lower, region.upper))
    return np.array(pts)


def _verify_common(dyn, policy, V, region, eps, certify_tol,
                   bound_method, node_limit, log, region_kind, level=None,
                   exclusion_radius=0.0):
    t0 = time.perf_counter()
    n_x = dyn.n_x
    m = MilpModel(maximize=True)
    x_vars = [m.add_var(f"x{d}", region.lower[d], region.upper[d])
              for d in range(n_x)]
    u_vars, pol_enc = encode_policy(m, policy, x_vars, region,
                                    bound_method=bound_method)
    xn_vars, dyn_enc = encode_dynamics(m, dyn, x_vars, u_vars, region,
                                       bound_method=bound_method)
    xn_box = Box(np.array([m.lo[v] for v in xn_vars]),
                 np.array([m.up[v] for v in xn_vars]))
    terms_x, venc_x = encode_lyapunov(m, V, x_vars, region, prefix="vx")
    terms_n, venc_n = encode_lyapunov(m, V, xn_vars, xn_box, prefix="vn")
    obj = dict(terms_n)
    for var, coef in terms_x.items():
        obj[var] = obj.get(var, 0.0) - (1.0 - eps) * coef
    m.set_objective(obj)
    if dyn_enc.step_bounds is not None:
        _step_difference_cuts(m, V, venc_x, venc_n, dyn_enc.step_bounds)

    linf_enc = None
    if level is not None:
        m.add_constraint(dict(terms_x), "<", level, name="level_cap")
        if exclusion_radius > 0.0:
            q, linf_enc = encode_linf(m, x_vars, V.x_eq, region, prefix="ring")
            m.add_constraint({q: -1.0}, "<", -exclusion_radius, name="ring_min")

    def admissible(x):
        if level is not None and eval_lyapunov(V, x) > level:
            return False
        if exclusion_radius > 0.0 and np.max(np.abs(x - V.x_eq)) < exclusion_radius:
            return False
        return True

    def assemble(x):
        out = np.zeros(m.n_vars)
        u = pol_enc.complete(x, out)
        xn = dyn_enc.complete(x, u, out)
        venc_x.complete(x, out)
        venc_n.complete(xn, out)
        if linf_enc is not None:
            linf_enc.complete(x, out)
        return out

    def completion(lp_point):
        x = np.clip(np.array([lp_point[v] for v in x_vars]),
                    region.lower, region.upper)
        if level is not None:
            # pull toward the equilibrium until back inside the level set;
            # nested level sets make the crossing monotone in the scale
            vx = eval_lyapunov(V, x)
            if vx > level:
                lo_t, hi_t = 0.0, 1.0
                for _ in range(50):
                    mid = 0.5 * (lo_t + hi_t)
                    if eval_lyapunov(V, V.x_eq + mid * (x - V.x_eq)) <= level:
                        lo_t = mid
                    else:
                        hi_t = mid
                x = V.x_eq + lo_t * (x - V.x_eq)
                if not region.contains(x, tol=1e-9):
                    # pulling toward the equilibrium left the sub-box
                    return None
        if not admissible(x):
            return None
        return assemble(x)

    rng = np.random.default_rng(0)
    best_hint = None
    best_gamma = -np.inf
    for x in _sample_states(region, V.x_eq, 24, rng):
        x = np.clip(x, region.lower, region.upper)
        if not admissible(x):
            continue
        vn, vx, _, _ = _gamma_direct(dyn, policy, V, x)
        g = vn - (1.0 - eps) * vx
        if g > best_gamma:
            best_gamma = g
            best_hint = x
    hint = assemble(best_hint) if best_hint is not None else None

    opts = MilpOptions(completion=completion, incumbent_hint=hint,
                       node_limit=node_limit, log=log)
    sol = solve_milp(m, opts)
    wall = time.perf_counter() - t0
    stats = {
        "status": sol.status,
        "nodes": sol.node_count,
        "simplex_iterations": sol.iterations,
        "binaries": m.n_binaries,
        "rows": m.n_rows,
        "vars": m.n_vars,
        "wall_time": wall,
        "region": region_kind,
        "objective": sol.objective,
        "best_bound": sol.best_bound,
    }
    if sol.status == "infeasible":
        # nothing admissible in the region (e.g. the exclusion ball covers
        # the whole level set): the condition holds vacuously
        return VerifyReport(True, -np.inf, None, stats)
    if sol.status not in ("optimal", "node_limit"):
        raise RuntimeError(f"verification solve failed: {sol.status}")
    gamma_star = float(sol.best_bound)
    certified = sol.status == "optimal" and gamma_star <= certify_tol
    counterexample = None
    if sol.x is not None:
        # worst point found, kept around even when certified (gradient
        # steps of the expansion loop evaluate there)
        stats["argmax"] = np.array([sol.x[v] for v in x_vars])
    if not certified and sol.x is not None:
        counterexample = np.array([sol.x[v] for v in x_vars])
    return VerifyReport(certified, gamma_star, counterexample, stats)


LEAF_NODE_CAP = 300
WIDTH_FLOOR = 1e-8


def _split_box(box, ref_width):
    """Halve the box along its widest axis, widths measured relative to
    the original region so anisotropic domains split evenly."""
    rel = (box.upper - box.lower) / ref_width
    d = int(np.argmax(rel))
    mid = 0.5 * (box.lower[d] + box.upper[d])
    up_left = np.array(box.upper, dtype=float)
    lo_right = np.array(box.lower, dtype=float)
    up_left[d] = mid
    lo_right[d] = mid
    return Box(box.lower, up_left), Box(lo_right, box.upper)


def _verify_spatial(dyn, policy, V, region, eps, certify_tol, bound_method,
                    node_limit, log, region_kind, level=None,
                    exclusion_radius=0.0, gap=1e-6, leaf_nodes=LEAF_NODE_CAP):
    """Best-first branch and bound over the region itself.

    The MILP relaxation takes its slack from envelopes and big-M rows
    built once from the whole region, so branching binaries alone closes
    the bound slowly: the slack is proportional to the box size, not to
    the branching depth. Splitting the region and re-encoding shrinks
    every envelope at once, and on a small box most pieces are sign-fixed
    so the leaf MILP is exact after a handful of nodes.

    Each sub-box is solved with a modest node cap; whichever open box
    still owns the largest upper bound is split next. The loop stops when
    that bound drops below certify_tol (certified), meets the best true
    violation found (maximum located to within `gap`, absolute and
    relative), or the total node budget runs out.
    """
    t0 = time.perf_counter()
    ref_width = np.maximum(region.upper - region.lower, 1e-300)
    budget = int(node_limit)
    totals = {"nodes": 0, "simplex_iterations": 0, "boxes": 0}
    shape = {}
    best_x = None
    best_gamma = -np.inf
    closed = -np.inf
    heap = []
    tick = 0

    def solve_leaf(box, inherited):
        nonlocal budget, best_x, best_gamma
        cap = max(50, min(leaf_nodes, budget))
        rep = _verify_common(dyn, policy, V, box, eps, certify_tol,
                             bound_method, cap, None, region_kind,
                             level=level, exclusion_radius=exclusion_radius)
        s = rep.stats
        budget -= s["nodes"]
        totals["nodes"] += s["nodes"]
        totals["simplex_iterations"] += s["simplex_iterations"]
        totals["boxes"] += 1
        if not shape:
            shape.update(binaries=s["binaries"], rows=s["rows"],
                         vars=s["vars"])
        xa = s.get("argmax")
        if xa is not None:
            vn, vx, _, _ = _gamma_direct(dyn, policy, V, xa)
            g = float(vn - (1.0 - eps) * vx)
            if g > best_gamma:
                best_gamma, best_x = g, np.asarray(xa, dtype=float)
        # a parent's proved bound stays valid for its children
        bound = min(float(rep.gamma_star), inherited)
        final = (s["status"] != "node_limit"
                 or float(np.max((box.upper - box.lower) / ref_width))
                 <= WIDTH_FLOOR)
        return bound, final

    def enqueue(box, inherited=np.inf):
        nonlocal closed, tick
        bound, final = solve_leaf(box, inherited)
        if final or not np.isfinite(bound):
            closed = max(closed, bound)
        else:
            tick += 1
            heapq.heappush(heap, (-bound, tick, box))

    enqueue(region)
    while heap and budget > 0:
        upper = max(-heap[0][0], closed)
        if upper <= certify_tol:
            break
        if upper - best_gamma <= max(gap, gap * abs(best_gamma)):
            break
        neg, _, box = heapq.heappop(heap)
        left, right = _split_box(box, ref_width)
        enqueue(left, -neg)
        enqueue(right, -neg)
        if log is not None and totals["boxes"] % 40 == 1:
            u = max(-heap[0][0], closed) if heap else closed
            print(f"    {totals['boxes']:5d} boxes  bound {u: .6g}  "
                  f"worst point {best_gamma: .6g}", file=log)

    upper = max(closed, best_gamma)
    if heap:
        upper = max(upper, -heap[0][0])
    gamma_star = float(upper)
    certified = gamma_star <= certify_tol
    open_gap = (bool(heap) and not certified
                and gamma_star - best_gamma > max(gap, gap * abs(best_gamma)))
    stats = {
        "status": "node_limit" if open_gap else "optimal",
        "nodes": totals["nodes"],
        "simplex_iterations": totals["simplex_iterations"],
        "boxes": totals["boxes"],
        "binaries": shape.get("binaries", 0),
        "rows": shape.get("rows", 0),
        "vars": shape.get("vars", 0),
        "wall_time": time.perf_counter() - t0,
        "region": region_kind,
        "objective": float(best_gamma),
        "best_bound": gamma_star,
    }
    if best_x is not None:
        stats["argmax"] = best_x
    counterexample = None if certified else best_x
    return VerifyReport(certified, gamma_star, counterexample, stats)


def verify_box(dyn, policy, V, region, eps, certify_tol=CERTIFY_TOL,
               bound_method="interval", node_limit=200_000, log=None,
               gap=1e-6, leaf_nodes=LEAF_NODE_CAP):
    """Certify V(f(x,pi(x))) <= (1-eps) V(x) for every x in the box."""
    _check_setup(dyn, policy, V, eps)
    if not isinstance(region, Box) or region.dim != dyn.n_x:
        raise DimensionError("region must be a box over the state space")
    if not region.is_finite():
        raise ValueError("verification region must be finite")
    return _verify_spatial(dyn, policy, V, region, eps, certify_tol,
                           bound_method, node_limit, log, region_kind="box",
                           gap=gap, leaf_nodes=leaf_nodes)


def verify_sublevel(dyn, policy, V, r, eps, exclusion_radius=0.0,
                    certify_tol=CERTIFY_TOL, domain=None,
                    bound_method="interval", node_limit=200_000, log=None,
                    gap=1e-6, leaf_nodes=LEAF_NODE_CAP):
    """Certify the decrease condition on {V <= r} minus an optional
    excluded ball around the equilibrium.

    The level set is boxed by its bounding box first; if `domain` is given
    and the box pokes out of it, the level is too large to trust the
    learned dynamics and a ValueError is raised.
    """
    _check_setup(dyn, policy, V, eps)
    if r <= 0:
        raise ValueError(f"level must be positive, got {r}")
    box = level_bounding_box(V, r)
    if domain is not None and not domain.contains_box(box):
        raise ValueError(
            f"bounding box of level {r} exceeds the trusted domain; "
            "shrink the level"
        )
    report = _verify_spatial(dyn, policy, V, box, eps, certify_tol,
                             bound_method, node_limit, log,
                             region_kind="sublevel", level=r,
                             exclusion_radius=exclusion_radius,
                             gap=gap, leaf_nodes=leaf_nodes)
    report.stats["level"] = r
    report.stats["exclusion_radius"] = exclusion_radius
    return report
