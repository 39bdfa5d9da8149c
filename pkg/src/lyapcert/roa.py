"""Inscribed squares of sublevel sets and certified region growth.

The largest box {‖x - x_eq‖∞ <= h} inside {V <= r} has h = r / l*, where
l* is the smallest l making

    g(l) = max V(x) - l ‖x - x_eq‖∞   over {x in B_r : V(x) <= r,
                                            ‖x - x_eq‖∞ >= exclusion}

non-positive. g is the same MILP encoding the verifier uses, restricted
to the candidate network; l* comes from bisection on l, its parameter
gradient from the envelope theorem with the activation pattern frozen at
the touching point. The expansion loop then trades off shrinking l*
against keeping the decrease condition certified.
"""

import numpy as np

from .lyapunov import eval_lyapunov, level_bounding_box, project_parameters
from .milp import MilpModel, encode_linf
from .pwl import Box
from .solver import MilpOptions, solve_lp, solve_milp
from .train import ParameterLayout, grad_fixed_pattern, lyapunov_backward, train_minmax
from .verify import encode_lyapunov, verify_sublevel

DEFAULT_EXCLUSION = 1e-3
G_TOL = 1e-6


class InscribedSquareResult:
    """Touching certificate for the largest box inside a sublevel set."""

    def __init__(self, l_star, x_star, half_width, iterations, g_value,
                 r, exclusion):
        self.l_star = l_star
        self.x_star = x_star
        self.half_width = half_width
        self.iterations = iterations
        self.g_value = g_value
        self.r = r
        self.exclusion = exclusion

    def __repr__(self):
        return (f"InscribedSquareResult(l_star={self.l_star:.6g}, "
                f"half_width={self.half_width:.6g}, "
                f"iterations={self.iterations})")


def _g_solve(V, r, l, exclusion, node_limit, hint_points=(), log=None):
    """Exact maximum of V(x) - l‖x - x_eq‖∞ over the ringed sublevel set.

    Returns (objective, best_bound, argmax). The objective is achieved at
    the argmax; the bound certifies no feasible point does better.
    """
    box = level_bounding_box(V, r)
    m = MilpModel(maximize=True)
    x_vars = [m.add_var(f"x{d}", box.lower[d], box.upper[d])
              for d in range(V.n_x)]
    terms, venc = encode_lyapunov(m, V, x_vars, box, prefix="v")
    m.add_constraint(dict(terms), "<", r, name="level_cap")
    q, linf_enc = encode_linf(m, x_vars, V.x_eq, box, prefix="ring")
    m.add_constraint({q: -1.0}, "<", -exclusion, name="ring_min")
    obj = dict(terms)
    obj[q] = obj.get(q, 0.0) - l
    m.set_objective(obj)

    def admissible(x):
        return (eval_lyapunov(V, x) <= r
                and np.max(np.abs(x - V.x_eq)) >= exclusion)

    def assemble(x):
        out = np.zeros(m.n_vars)
        venc.complete(x, out)
        linf_enc.complete(x, out)
        return out

    def pull_back(x):
        """Move x onto the feasible set: shrink into the level set along
        the ray from the equilibrium (sound, V grows along rays), then
        push back out if that landed inside the exclusion ring."""
        x = np.clip(x, box.lower, box.upper)
        if eval_lyapunov(V, x) > r:
            lo_t, hi_t = 0.0, 1.0
            for _ in range(50):
                mid = 0.5 * (lo_t + hi_t)
                if eval_lyapunov(V, V.x_eq + mid * (x - V.x_eq)) <= r:
                    lo_t = mid
                else:
                    hi_t = mid
            x = V.x_eq + lo_t * (x - V.x_eq)
        width = np.max(np.abs(x - V.x_eq))
        if width < exclusion:
            if width <= 0.0:
                return None
            x = V.x_eq + (exclusion / width) * (x - V.x_eq)
        return x if admissible(x) else None

    def completion(lp_point):
        x = pull_back(np.array([lp_point[v] for v in x_vars]))
        return None if x is None else assemble(x)

    best_hint = None
    best_val = -np.inf
    for x in hint_points:
        x = pull_back(np.asarray(x, dtype=float))
        if x is None:
            continue
        val = eval_lyapunov(V, x) - l * np.max(np.abs(x - V.x_eq))
        if val > best_val:
            best_val = val
            best_hint = x
    hint = assemble(best_hint) if best_hint is not None else None

    opts = MilpOptions(completion=completion, incumbent_hint=hint,
                       node_limit=node_limit, log=log)
    sol = solve_milp(m, opts)
    if sol.status == "infeasible":
        raise ValueError(
            "sublevel set minus the exclusion ring is empty; the level is "
            "too small for the exclusion radius")
    if sol.status != "optimal":
        raise RuntimeError(f"g(l) solve failed: {sol.status}")
    argmax = np.array([sol.x[v] for v in x_vars])
    return float(sol.objective), float(sol.best_bound), argmax


def eval_g(V, r, l, exclusion=DEFAULT_EXCLUSION, node_limit=200_000,
           log=None):
    """Maximum of V(x) - l‖x - x_eq‖∞ over the ringed sublevel set."""
    V.validate()
    if r <= 0 or exclusion <= 0:
        raise ValueError("level and exclusion radius must be positive")
    g, _, argmax = _g_solve(V, r, l, exclusion, node_limit,
                            hint_points=_ray_crossings(V, r), log=log)
    return g, argmax


def _ray_crossings(V, r):
    """Points just inside the level set along every signed axis ray."""
    box = level_bounding_box(V, r)
    pts = []
    for d in range(V.n_x):
        for sign, cap in ((1.0, box.upper[d] - V.x_eq[d]),
                          (-1.0, V.x_eq[d] - box.lower[d])):
            if cap <= 0.0:
                continue
            e = np.zeros(V.n_x)
            e[d] = sign
            lo_t, hi_t = 0.0, cap
            for _ in range(40):
                mid = 0.5 * (lo_t + hi_t)
                if eval_lyapunov(V, V.x_eq + mid * e) <= r:
                    lo_t = mid
                else:
                    hi_t = mid
            if lo_t > 0.0:
                pts.append(V.x_eq + lo_t * e)
    return pts


def find_lstar(V, r, exclusion=DEFAULT_EXCLUSION, g_tol=G_TOL,
               max_iter=60, node_limit=200_000, log=None):
    """Bisection for the root of g, returning the touching certificate.

    The upper end of the bracket only moves when the solver's bound
    certifies g <= 0 there, so the returned square is sound, not just
    plausible. Termination wants g(l*) in [-g_tol, 0].
    """
    V.validate()
    if r <= 0 or exclusion <= 0:
        raise ValueError("level and exclusion radius must be positive")
    crossings = _ray_crossings(V, r)
    lo = 0.0
    for x in crossings:
        width = np.max(np.abs(x - V.x_eq))
        if width >= exclusion:
            lo = max(lo, eval_lyapunov(V, x) / width)
    cap = r / exclusion + 1.0

    box = level_bounding_box(V, r)
    min_half = float(np.min(box.half_width))
    hi = max(2.0 * lo, r / min_half if min_half > 0 else 1.0, 1e-6)

    iterations = 0
    g_hi = bound_hi = None
    x_hi = None
    hints = list(crossings)

    def g_at(l):
        nonlocal iterations
        iterations += 1
        return _g_solve(V, r, l, exclusion, node_limit,
                        hint_points=hints, log=log)

    # grow hi until the bound certifies g(hi) <= 0
    while iterations < max_iter:
        g_hi, bound_hi, x_hi = g_at(hi)
        hints = list(crossings) + [x_hi]
        if bound_hi <= 0.0:
            break
        lo = hi
        hi = min(2.0 * hi, cap)
    if bound_hi is None or bound_hi > 0.0:
        raise ValueError(
            "no sign change in g; the candidate is degenerate on this level")

    # narrow until g(hi) sits in [-g_tol, 0] AND the bracket pins l*; the
    # g window alone is loose once the argmax collapses onto the exclusion
    # ring, where g decays at slope -exclusion per unit of l
    while iterations < max_iter:
        l_tol = 1e-6 * max(1.0, hi)
        if g_hi >= -g_tol and hi - lo <= l_tol:
            break
        mid = 0.5 * (lo + hi)
        g_mid, bound_mid, x_mid = g_at(mid)
        hints = list(crossings) + [x_mid]
        if bound_mid <= 0.0:
            hi, g_hi, x_hi = mid, g_mid, x_mid
        else:
            lo = mid
    if g_hi < -g_tol:
        raise ValueError(
            f"bisection did not reach the g tolerance in {max_iter} solves")
    return InscribedSquareResult(hi, x_hi, r / hi, iterations, g_hi, r,
                                 exclusion)


def grad_lstar(V, result, layout):
    """Parameter gradient of l* at the touching point, pattern frozen.

    d l*/d theta = grad_theta V(x*) / ‖x* - x_eq‖∞ by the envelope
    theorem applied to the root of g. Policy entries of the layout are
    zero; parameters outside the active units at x* contribute nothing.
    """
    x_star = np.asarray(result.x_star, dtype=float)
    width = float(np.max(np.abs(x_star - V.x_eq)))
    if width < result.exclusion / 2.0:
        raise ValueError("touching point collapsed onto the equilibrium")
    _, _, v_grads = lyapunov_backward(V, x_star)
    zero_pol = [(np.zeros_like(W), np.zeros_like(b))
                for W, b in layout.policy.net.layers]
    flat = layout.grad(zero_pol, v_grads, v_grads, 0.0)
    return flat / width


def choose_direction(grad_gamma, grad_lstar):
    """Joint direction: grow the square without un-certifying.

    max_w grad_lstar . w + s  s.t.  grad_gamma . w >= s,
    grad_lstar . w >= 0, ‖w‖∞ <= 1, s >= 0. Stepping along -w then
    decreases both l* and the worst-case decrease margin to first order.
    """
    gl = np.asarray(grad_lstar, dtype=float)
    gg = np.asarray(grad_gamma, dtype=float)
    if not (np.all(np.isfinite(gl)) and np.all(np.isfinite(gg))):
        raise ValueError("gradients must be finite")
    n = gl.size
    c = np.concatenate([gl, [1.0]])
    # rows negated into <= form: -(gg.w - s) <= 0 and -(gl.w) <= 0
    A = np.zeros((2, n + 1))
    A[0, :n] = -gg
    A[0, n] = 1.0
    A[1, :n] = -gl
    senses = ["<", "<"]
    b = np.zeros(2)
    lo = np.concatenate([-np.ones(n), [0.0]])
    up = np.concatenate([np.ones(n), [np.abs(gg).sum() + 1.0]])
    sol = solve_lp(c, A, senses, b, lo, up, maximize=True)
    if sol.status != "optimal":
        raise RuntimeError(f"direction LP failed: {sol.status}")
    w = sol.x[:n].copy()
    # parameters carrying no gradient at all are free in the LP and would
    # land on an arbitrary corner of the box; keep them in place instead
    w[(gl == 0.0) & (gg == 0.0)] = 0.0
    return w


def _history_row(iteration, res, gamma_star, accepted, step):
    return {
        "iteration": iteration,
        "l_star": res.l_star,
        "half_width": res.half_width,
        "gamma_star": gamma_star,
        "accepted": accepted,
        "step_size": step,
    }


def _sub_config(cfg, r):
    from .train import TrainConfig

    return TrainConfig(step_size=cfg.step_size,
                       max_iterations=cfg.max_iterations, eps=cfg.eps,
                       region_schedule=[r], seed=cfg.seed,
                       certify_tol=cfg.certify_tol, patience=cfg.patience,
                       node_limit=cfg.node_limit, min_step=cfg.min_step,
                       exclusion_radius=cfg.exclusion_radius, log=cfg.log)


def expand_roa(dyn, policy, V, r, cfg, domain=None, max_trials=10,
               max_outer=50, exclusion=DEFAULT_EXCLUSION, g_tol=G_TOL,
               stepsize=None):
    """Grow the certified sublevel set at a fixed level value r.

    Outer loop: take max_trials joint gradient steps that shrink l*
    (enlarging the inscribed square), then re-verify the decrease
    condition on {V <= r}. A pass is accepted only when the triple
    re-certifies and the square did not shrink; otherwise the whole batch
    of steps is rolled back and the step size halved. Returns
    (policy, V, history of per-pass rows). The returned triple is always
    certified when the history has an accepted row.

    Stops when the bounding box of the level set leaves `domain` (the
    learned dynamics are not trusted outside it), on max_outer passes, or
    when the step size collapses.
    """
    step = cfg.step_size if stepsize is None else stepsize
    sub_cfg = _sub_config(cfg, r)

    def check(pol, cand):
        return verify_sublevel(dyn, pol, cand, r, cfg.eps,
                               exclusion_radius=cfg.exclusion_radius,
                               certify_tol=cfg.certify_tol,
                               node_limit=cfg.node_limit, log=cfg.log)

    policy, V, certified, _ = train_minmax(dyn, policy, V, sub_cfg,
                                           region_kind="sublevel")
    history = []
    if not certified:
        return policy, V, history
    rep = check(policy, V)
    if not rep.certified:
        return policy, V, history
    layout = ParameterLayout(policy, V)
    res = find_lstar(V, r, exclusion=exclusion, g_tol=g_tol,
                     node_limit=cfg.node_limit)
    history.append(_history_row(0, res, rep.gamma_star, True, step))

    for outer in range(1, max_outer + 1):
        if domain is not None and not domain.contains_box(
                level_bounding_box(V, r)):
            break
        x_gamma = rep.stats.get("argmax")
        cur_pol, cur_V = policy, V
        for _ in range(max_trials):
            res_t = find_lstar(cur_V, r, exclusion=exclusion, g_tol=g_tol,
                               node_limit=cfg.node_limit)
            gl = grad_lstar(cur_V, res_t, layout)
            if x_gamma is not None:
                gg = grad_fixed_pattern(dyn, cur_pol, cur_V, x_gamma,
                                        cfg.eps, layout)
            else:
                gg = np.zeros(layout.size)
            w = choose_direction(gg, gl)
            if not np.any(w):
                break
            theta = layout.pack(cur_pol, cur_V) - step * w
            cur_pol, cur_V = layout.unpack(theta)
            cur_V = project_parameters(cur_V)

        rep_new = check(cur_pol, cur_V)
        if not rep_new.certified:
            # one repair attempt by the certification loop before giving up
            cur_pol, cur_V, repaired, _ = train_minmax(
                dyn, cur_pol, cur_V, sub_cfg, region_kind="sublevel")
            if repaired:
                rep_new = check(cur_pol, cur_V)
        res_new = None
        if rep_new.certified:
            res_new = find_lstar(cur_V, r, exclusion=exclusion, g_tol=g_tol,
                                 node_limit=cfg.node_limit)
        if res_new is not None and res_new.half_width >= res.half_width - 1e-12:
            policy, V, rep, res = cur_pol, cur_V, rep_new, res_new
            history.append(_history_row(outer, res, rep.gamma_star, True,
                                        step))
        else:
            history.append(_history_row(outer, res, rep_new.gamma_star,
                                        False, step))
            step *= 0.5
            if step < cfg.min_step:
                break
    return policy, V, history


def max_level_in_domain(V, domain):
    """Largest rho* with {V <= rho} inside the domain for every rho < rho*.

    One minimization MILP per domain face: the level set escapes through
    whichever face V dips lowest on, so rho* is the smallest face minimum.
    """
    V.validate()
    if domain.dim != V.n_x:
        raise ValueError("domain dimension does not match the candidate")
    best = np.inf
    for d in range(V.n_x):
        for val in (domain.lower[d], domain.upper[d]):
            f_lo = domain.lower.copy()
            f_up = domain.upper.copy()
            f_lo[d] = val
            f_up[d] = val
            face = Box(f_lo, f_up)
            m = MilpModel(maximize=False)
            x_vars = [m.add_var(f"x{k}", face.lower[k], face.upper[k])
                      for k in range(V.n_x)]
            terms, venc = encode_lyapunov(m, V, x_vars, face, prefix="v")
            m.set_objective(dict(terms))

            def assemble(x):
                out = np.zeros(m.n_vars)
                venc.complete(x, out)
                return out

            def completion(lp_point):
                x = np.clip(np.array([lp_point[v] for v in x_vars]),
                            face.lower, face.upper)
                return assemble(x)

            sol = solve_milp(m, MilpOptions(completion=completion,
                                            incumbent_hint=assemble(
                                                face.center)))
            if sol.status != "optimal":
                raise RuntimeError(f"face minimization failed: {sol.status}")
            best = min(best, float(sol.best_bound))
    return max(best, 0.0)
