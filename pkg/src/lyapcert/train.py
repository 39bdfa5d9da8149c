"""Dynamics fitting, LQR initialization, and min-max training.

Gradients through the piecewise-linear pipeline are taken with every
activation pattern frozen at its current linear piece, which is the
correct subgradient almost everywhere and is what makes the worst-case
objective differentiable at MILP argmax points.
"""

import time
import warnings

import numpy as np

from .lyapunov import (
    MonotonicLayer,
    MonotonicLyapunov,
    MonotonicUnit,
    eval_lyapunov,
    project_parameters,
)
from .pwl import Box, DynamicsModel, PolicyModel, PwlNetwork, eval_pwl_network
from .verify import CERTIFY_TOL, verify_box, verify_sublevel


def _act_deriv(pre, leak):
    return np.where(pre >= 0.0, 1.0, leak)


def net_backward(net, x, cot):
    """Backprop an output cotangent through the network at one input.

    Returns (grads, cot_in): grads is a list of (dW, db) per affine layer,
    cot_in the cotangent on the input vector.
    """
    x = np.asarray(x, dtype=float)
    inputs = [x]
    pres = []
    z = x
    last = len(net.layers) - 1
    for i, (W, b) in enumerate(net.layers):
        zhat = W @ z + b
        if i < last:
            pres.append(zhat)
            z = np.where(zhat >= 0.0, zhat, net.leak * zhat)
            inputs.append(z)
    g = np.asarray(cot, dtype=float)
    grads = [None] * len(net.layers)
    for i in range(last, -1, -1):
        W, _ = net.layers[i]
        grads[i] = (np.outer(g, inputs[i]), g.copy())
        g = W.T @ g
        if i > 0:
            g = g * _act_deriv(pres[i - 1], net.leak)
    return grads, g


def lyapunov_backward(V, x):
    """Value, state gradient, and parameter gradients of V at x.

    Parameter gradients come back as one (da, db, dc) triple per unit in
    units_flat order per layer. Activation patterns are frozen: a kink
    counts as active when its argument is >= 0.
    """
    x = np.asarray(x, dtype=float)
    cur = x - V.x_eq
    tapes = []
    for layer in V.layers:
        tape = []
        out = np.zeros(layer.output_dim)
        for j, v, c, unit in layer.units_flat():
            y = float(v @ cur)
            rel = np.maximum(y - unit.b, 0.0)
            active = (y - unit.b) >= 0.0
            m_val = float(unit.a @ rel)
            out[j] += c * m_val
            tape.append((j, v, c, unit, rel, active, m_val))
        tapes.append((tape, cur))
        cur = out
    value = float(cur[0])
    if V.lam > 0.0:
        t = V.R @ (x - V.x_eq)
        value += V.lam * float(np.abs(t).sum())

    cot_out = np.ones(1)
    param_grads = [None] * len(V.layers)
    for li in range(len(V.layers) - 1, -1, -1):
        tape, layer_in = tapes[li]
        cot_in = np.zeros(layer_in.size)
        grads = []
        for j, v, c, unit, rel, active, m_val in tape:
            w = float(cot_out[j])
            da = w * c * rel
            db = -w * c * unit.a * active
            dc = w * m_val
            slope = float(unit.a @ active)
            cot_in += w * c * slope * v
            grads.append((da, db, dc))
        param_grads[li] = grads
        cot_out = cot_in
    dx = cot_out
    if V.lam > 0.0:
        t = V.R @ (x - V.x_eq)
        dx = dx + V.lam * (V.R.T @ np.sign(t))
    return value, dx, param_grads


class ParameterLayout:
    """Flat vector view of the trainable parameters.

    Policy network weights and biases come first, then per unit of the
    candidate: slopes a, biases b, coefficient c. Directions, R, lam and
    the equilibrium are fixed.
    """

    def __init__(self, policy, V):
        self.policy = policy
        self.V = V
        self.policy_slices = []
        pos = 0
        for W, b in policy.net.layers:
            self.policy_slices.append(((pos, pos + W.size), W.shape))
            pos += W.size
            self.policy_slices.append(((pos, pos + b.size), b.shape))
            pos += b.size
        for layer in V.layers:
            for _, _, _, unit in layer.units_flat():
                pos += 2 * unit.a.size + 1
        self.size = pos

    def pack(self, policy, V):
        theta = np.empty(self.size)
        i = 0
        for W, b in policy.net.layers:
            theta[i : i + W.size] = W.ravel()
            i += W.size
            theta[i : i + b.size] = b
            i += b.size
        for layer in V.layers:
            for _, _, c, unit in layer.units_flat():
                p = unit.a.size
                theta[i : i + p] = unit.a
                theta[i + p : i + 2 * p] = unit.b
                theta[i + 2 * p] = c
                i += 2 * p + 1
        return theta

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        layers = []
        i = 0
        for W, b in self.policy.net.layers:
            Wn = theta[i : i + W.size].reshape(W.shape)
            i += W.size
            bn = theta[i : i + b.size].copy()
            i += b.size
            layers.append((Wn, bn))
        p0 = self.policy
        policy = PolicyModel(p0.net.with_params(layers), p0.x_eq, p0.u_eq,
                             p0.u_min, p0.u_max)
        new_layers = []
        for layer in self.V.layers:
            new_groups = []
            for group in layer.groups:
                parsed = []
                for v, _, unit in group:
                    p = unit.a.size
                    a = theta[i : i + p].copy()
                    b = theta[i + p : i + 2 * p].copy()
                    c = float(theta[i + 2 * p])
                    i += 2 * p + 1
                    parsed.append((v, c, MonotonicUnit(
                        a, b, eps=unit.eps, plus_class=unit.plus_class)))
                new_groups.append(parsed)
            new_layers.append(MonotonicLayer(new_groups))
        V = MonotonicLyapunov(new_layers, self.V.x_eq, R=self.V.R, lam=self.V.lam)
        return policy, V

    def grad(self, policy_grads, v_grads_here, v_grads_next, scale_here):
        """Assemble the flat gradient from the per-piece gradients."""
        g = np.zeros(self.size)
        i = 0
        for dW, db in policy_grads:
            g[i : i + dW.size] = dW.ravel()
            i += dW.size
            g[i : i + db.size] = db
            i += db.size
        for li in range(len(self.V.layers)):
            for k in range(len(v_grads_next[li])):
                da_n, db_n, dc_n = v_grads_next[li][k]
                da_h, db_h, dc_h = v_grads_here[li][k]
                p = da_n.size
                g[i : i + p] = da_n + scale_here * da_h
                g[i + p : i + 2 * p] = db_n + scale_here * db_h
                g[i + 2 * p] = dc_n + scale_here * dc_h
                i += 2 * p + 1
        return g


def grad_fixed_pattern(dyn, policy, V, x, eps, layout):
    """Gradient of V(f(x, pi(x))) - (1 - eps) V(x) in the trainables at fixed x.

    Dynamics parameters are frozen; the policy gradient flows through both
    the network at x and the equilibrium offset, with saturated controls
    blocking the path.
    """
    x = np.asarray(x, dtype=float)
    u_raw = (eval_pwl_network(policy.net, x) - policy.phi_eq + policy.u_eq)
    u = np.clip(u_raw, policy.u_min, policy.u_max)
    xn = dyn.step(x, u)

    _, dV_dxn, v_next = lyapunov_backward(V, xn)
    _, _, v_here = lyapunov_backward(V, x)

    _, cot_xu = net_backward(dyn.net, np.concatenate([x, u]), dV_dxn)
    cot_u = cot_xu[dyn.n_x :]
    passthrough = (u_raw > policy.u_min) & (u_raw < policy.u_max)
    cot_u = cot_u * passthrough

    g_at_x, _ = net_backward(policy.net, x, cot_u)
    g_at_eq, _ = net_backward(policy.net, policy.x_eq, -cot_u)
    policy_grads = [(a + b, c + d) for (a, c), (b, d) in zip(g_at_x, g_at_eq)]
    return layout.grad(policy_grads, v_here, v_next, -(1.0 - eps))


def sample_box(rng, box, n):
    return rng.uniform(box.lower, box.upper, size=(n, box.dim))


def _batch_forward(net, X):
    pres = []
    acts = [X]
    Z = X
    last = len(net.layers) - 1
    for i, (W, b) in enumerate(net.layers):
        Zh = Z @ W.T + b
        if i < last:
            pres.append(Zh)
            Z = np.where(Zh >= 0.0, Zh, net.leak * Zh)
            acts.append(Z)
        else:
            return Zh, pres, acts
    raise AssertionError("unreachable")


def _batch_grads(net, X, Y):
    """Mean-squared-error value and per-layer gradients on a batch."""
    pred, pres, acts = _batch_forward(net, X)
    diff = pred - Y
    loss = float(np.mean(diff ** 2))
    G = 2.0 * diff / X.shape[0]
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        W, _ = net.layers[i]
        grads[i] = (G.T @ acts[i], G.sum(axis=0))
        G = G @ W
        if i > 0:
            G = G * _act_deriv(pres[i - 1], net.leak)
    return loss, grads


def _adam_fit(net, X, Y, epochs, batch, step0, rng):
    """Adam with a cosine step decay. The decay matters for the tails: a
    constant step leaves the max residual an order of magnitude above what
    the same budget reaches with annealing."""
    params = [(W.copy(), b.copy()) for W, b in net.layers]
    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    n = X.shape[0]
    for epoch in range(epochs):
        step = step0 * 0.5 * (1.0 + np.cos(np.pi * epoch / epochs))
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s : s + batch]
            net = net.with_params(params)
            _, grads = _batch_grads(net, X[idx], Y[idx])
            t += 1
            for i, (gW, gb) in enumerate(grads):
                mW, mb = m[i]
                vW, vb = v[i]
                mW[:] = b1 * mW + (1 - b1) * gW
                mb[:] = b1 * mb + (1 - b1) * gb
                vW[:] = b2 * vW + (1 - b2) * gW ** 2
                vb[:] = b2 * vb + (1 - b2) * gb ** 2
                corr = np.sqrt(1 - b2 ** t) / (1 - b1 ** t)
                W, b = params[i]
                W -= step * corr * mW / (np.sqrt(vW) + eps)
                b -= step * corr * mb / (np.sqrt(vb) + eps)
    return net.with_params(params)


def _lstsq_refit_last(net, X, Y):
    """Exact least-squares solve of the output layer on the learned features."""
    if len(net.layers) == 1:
        feats = X
    else:
        feats = X
        for W, b in net.layers[:-1]:
            Zh = feats @ W.T + b
            feats = np.where(Zh >= 0.0, Zh, net.leak * Zh)
    A = np.hstack([feats, np.ones((feats.shape[0], 1))])
    sol, _, _, _ = np.linalg.lstsq(A, Y, rcond=None)
    W = sol[:-1].T
    b = sol[-1]
    return net.with_params(list(net.layers[:-1]) + [(W, b)])


def fit_dynamics(system, domain=None, control_box=None, arch=(16, 16),
                 samples=50_000, seed=0, leak=0.1, epochs=300, batch=512,
                 step=2e-2, holdout=0.1, residual_threshold=1e-2):
    """Regress a leaky-relu network onto the discretized true dynamics.

    Inputs are (x, u) samples over domain x control_box, targets the
    change x+ - x of one Euler step, so the model carries the identity
    outside the network and the network output stays one-step small.
    Input/output standardization is folded back into the first and last
    layers so the returned network works in raw units; the output layer
    gets an exact least-squares refit at the end. The held-out max
    residual (in standardized step units) lands in model.fit_report.
    """
    domain = system.domain if domain is None else domain
    control_box = system.control if control_box is None else control_box
    rng = np.random.default_rng(seed)
    arch = list(arch)
    dims = [system.n_x + system.n_u] + arch + [system.n_x]
    n_params = sum(dims[i + 1] * (dims[i] + 1) for i in range(len(dims) - 1))
    if samples < 10 * n_params:
        raise ValueError(
            f"need at least {10 * n_params} samples for {n_params} parameters")

    X = np.hstack([sample_box(rng, domain, samples),
                   sample_box(rng, control_box, samples)])
    Y = np.empty((samples, system.n_x))
    for i in range(samples):
        Y[i] = system.dt * system.xdot(X[i, : system.n_x], X[i, system.n_x :])

    n_val = max(1, int(holdout * samples))
    Xv, Yv = X[:n_val], Y[:n_val]
    Xt, Yt = X[n_val:], Y[n_val:]

    mu_in, sd_in = Xt.mean(axis=0), Xt.std(axis=0) + 1e-12
    mu_out, sd_out = Yt.mean(axis=0), Yt.std(axis=0) + 1e-12
    Xs = (Xt - mu_in) / sd_in
    Ys = (Yt - mu_out) / sd_out

    layers = []
    for i in range(len(dims) - 1):
        scale = np.sqrt(2.0 / dims[i])
        layers.append((scale * rng.standard_normal((dims[i + 1], dims[i])),
                       np.zeros(dims[i + 1])))
    net = PwlNetwork(layers, leak=leak)
    if arch:
        net = _adam_fit(net, Xs, Ys, epochs, batch, step, rng)
    net = _lstsq_refit_last(net, Xs, Ys)

    # fold the standardization into the boundary layers
    W0, b0 = net.layers[0]
    first = (W0 / sd_in, b0 - W0 @ (mu_in / sd_in))
    WL, bL = net.layers[-1]
    lastl = (sd_out[:, None] * WL, sd_out * bL + mu_out)
    if len(net.layers) == 1:
        folded = [(sd_out[:, None] * first[0], sd_out * first[1] + mu_out)]
    else:
        folded = [first] + list(net.layers[1:-1]) + [lastl]
    net = net.with_params(folded)

    pred = eval_pwl_network(net, Xv)
    resid = float(np.max(np.abs((pred - Yv) / sd_out)))
    if resid > residual_threshold:
        warnings.warn(
            f"dynamics fit residual {resid:.3g} above {residual_threshold:.3g}")
    model = DynamicsModel(net, system.x_eq, system.u_eq, residual=True)
    model.fit_report = {
        "max_residual": resid,
        "samples": samples,
        "holdout": n_val,
        "parameters": n_params,
    }
    return model


def linearize_discrete(system, h=1e-6):
    """Central-difference linearization of the Euler step at equilibrium."""
    from .systems import step_system

    n, m = system.n_x, system.n_u
    A = np.empty((n, n))
    B = np.empty((n, m))
    for d in range(n):
        e = np.zeros(n)
        e[d] = h
        A[:, d] = (step_system(system, system.x_eq + e, system.u_eq)
                   - step_system(system, system.x_eq - e, system.u_eq)) / (2 * h)
    for d in range(m):
        e = np.zeros(m)
        e[d] = h
        B[:, d] = (step_system(system, system.x_eq, system.u_eq + e)
                   - step_system(system, system.x_eq, system.u_eq - e)) / (2 * h)
    return A, B


def dare_fixed_point(A, B, Q, Rc, tol=1e-10, max_iter=100_000):
    """Discrete-time algebraic Riccati equation by fixed-point iteration."""
    A, B = np.asarray(A, float), np.asarray(B, float)
    Q, Rc = np.atleast_2d(np.asarray(Q, float)), np.atleast_2d(np.asarray(Rc, float))
    S = Q.copy()
    for _ in range(max_iter):
        BtS = B.T @ S
        gain = np.linalg.solve(Rc + BtS @ B, BtS @ A)
        Sn = Q + A.T @ S @ (A - B @ gain)
        Sn = 0.5 * (Sn + Sn.T)
        if not np.all(np.isfinite(Sn)) or np.abs(Sn).max() > 1e12:
            raise ValueError("Riccati iteration diverged (uncontrollable pair?)")
        if np.abs(Sn - S).max() <= tol:
            return Sn
        S = Sn
    raise ValueError("Riccati iteration did not converge")


def lqr_gain(A, B, S, Rc):
    BtS = np.asarray(B).T @ S
    return np.linalg.solve(np.atleast_2d(Rc) + BtS @ B, BtS @ A)


def _ray_extent(box, x_eq, v):
    """Largest t with x_eq + t v inside the box."""
    t = np.inf
    for d in range(box.dim):
        if v[d] > 1e-15:
            t = min(t, (box.upper[d] - x_eq[d]) / v[d])
        elif v[d] < -1e-15:
            t = min(t, (box.lower[d] - x_eq[d]) / v[d])
    return t


def lqr_init(system, dyn, policy_arch=(8,), order=4, extra_dirs=True,
             alpha=None, lam=0.1, Q=None, Rc=None, seed=0, leak=0.1,
             policy_samples=20_000, epochs=30):
    """Initialize the controller and candidate from the LQR solution.

    The policy regresses to u = -K (x - x_eq) + u_eq (exactly, for an
    empty arch). Candidate units sit on every signed axis plus the signed
    Riccati eigenvectors, with slopes matching alpha * sqrt(v' S v) along
    each ray; R rows are the eigenvectors perturbed by 1e-2.
    """
    rng = np.random.default_rng(seed)
    A, B = linearize_discrete(system)
    Q = np.eye(system.n_x) if Q is None else np.atleast_2d(Q)
    Rc = np.eye(system.n_u) if Rc is None else np.atleast_2d(Rc)
    S = dare_fixed_point(A, B, Q, Rc)
    K = lqr_gain(A, B, S, Rc)

    x_eq, u_eq = system.x_eq, system.u_eq
    if not policy_arch:
        net = PwlNetwork([(-K, np.zeros(system.n_u))], leak=leak)
    else:
        Xp = sample_box(rng, system.domain, policy_samples)
        Yp = (x_eq - Xp) @ K.T + u_eq
        mu, sd = Xp.mean(axis=0), Xp.std(axis=0) + 1e-12
        dims = [system.n_x] + list(policy_arch) + [system.n_u]
        layers = []
        for i in range(len(dims) - 1):
            scale = np.sqrt(2.0 / dims[i])
            layers.append((scale * rng.standard_normal((dims[i + 1], dims[i])),
                           np.zeros(dims[i + 1])))
        net = PwlNetwork(layers, leak=leak)
        Xs = (Xp - mu) / sd
        net = _adam_fit(net, Xs, Yp, epochs, 256, 1e-3, rng)
        net = _lstsq_refit_last(net, Xs, Yp)
        W0, b0 = net.layers[0]
        net = net.with_params([(W0 / sd, b0 - W0 @ (mu / sd))]
                              + list(net.layers[1:]))
    policy = PolicyModel(net, x_eq, u_eq, system.control.lower,
                         system.control.upper)

    evals, evecs = np.linalg.eigh(S)
    for _ in range(50):
        R = evecs.T + 1e-2 * rng.standard_normal((system.n_x, system.n_x))
        if abs(np.linalg.det(R)) > 1e-8:
            break
    else:
        raise ValueError("could not build a full-rank R")

    dirs = [row for row in np.vstack([np.eye(system.n_x), -np.eye(system.n_x)])]
    if extra_dirs:
        for k in range(system.n_x):
            w = evecs[:, k]
            dirs.append(w.copy())
            dirs.append(-w.copy())

    slopes = [float(np.sqrt(v @ S @ v)) for v in dirs]
    if alpha is None:
        # scale the candidate so a mid-domain state sits near level 10
        spans = [_ray_extent(system.domain, x_eq, v) for v in dirs]
        typical = np.mean([s * t for s, t in zip(slopes, spans)])
        alpha = 10.0 / max(typical, 1e-9)
    units = []
    for v, s in zip(dirs, slopes):
        t_max = _ray_extent(system.domain, x_eq, v)
        b = np.concatenate([[0.0], np.linspace(0, max(t_max, 1e-3), order)[1:]])
        a = np.zeros(order)
        a[0] = max(alpha * s, 2e-2)
        units.append((v, 1.0, MonotonicUnit(a, b, plus_class=True)))
    V = project_parameters(
        MonotonicLyapunov([MonotonicLayer(units)], x_eq, R=R, lam=lam))
    V.lqr = {"S": S, "K": K, "alpha": alpha}
    return policy, V


def nested_boxes(domain, x_eq, n=5, start=0.2):
    """Nested region schedule growing linearly from start to the full box."""
    x_eq = np.asarray(x_eq, dtype=float)
    boxes = []
    for f in np.linspace(start, 1.0, n):
        boxes.append(Box(x_eq + f * (domain.lower - x_eq),
                         x_eq + f * (domain.upper - x_eq)))
    return boxes


class TrainConfig:
    def __init__(self, step_size=1e-3, max_iterations=500, eps=0.01,
                 region_schedule=None, seed=0, certify_tol=CERTIFY_TOL,
                 patience=5, node_limit=200_000, min_step=1e-8,
                 exclusion_radius=0.0, log=None, checkpoint=None,
                 checkpoint_every=10):
        if step_size <= 0:
            raise ValueError("step size must be positive")
        self.step_size = step_size
        self.max_iterations = int(max_iterations)
        self.eps = eps
        self.region_schedule = region_schedule
        self.seed = seed
        self.certify_tol = certify_tol
        self.patience = patience
        self.node_limit = node_limit
        self.min_step = min_step
        self.exclusion_radius = exclusion_radius
        self.log = log
        self.checkpoint = checkpoint
        self.checkpoint_every = checkpoint_every


def _verify_region(dyn, policy, V, region, cfg, region_kind):
    if region_kind == "box":
        return verify_box(dyn, policy, V, region, cfg.eps,
                          certify_tol=cfg.certify_tol,
                          node_limit=cfg.node_limit)
    return verify_sublevel(dyn, policy, V, region, cfg.eps,
                           exclusion_radius=cfg.exclusion_radius,
                           certify_tol=cfg.certify_tol,
                           node_limit=cfg.node_limit)


def train_minmax(dyn, policy, V, cfg, region_kind="box"):
    """Alternate exact verification with subgradient descent on the worst
    violation until the last region of the schedule certifies.

    Returns (policy, V, certified, history). History rows are dicts, one
    per verification solve.
    """
    if region_kind not in ("box", "sublevel"):
        raise ValueError(f"unknown region kind {region_kind!r}")
    schedule = cfg.region_schedule
    if not schedule:
        raise ValueError("region schedule must be a non-empty list")
    layout = ParameterLayout(policy, V)
    theta = layout.pack(policy, V)
    step = cfg.step_size
    history = []
    steps_taken = 0
    region_idx = 0
    last_gamma = np.inf
    bad = 0
    t0 = time.time()
    while True:
        rep = _verify_region(dyn, policy, V, schedule[region_idx], cfg,
                             region_kind)
        history.append({
            "iteration": len(history),
            "gamma_star": rep.gamma_star,
            "region_index": region_idx,
            "certified": rep.certified,
            "step_size": step,
            "milp_solves": 1,
            "wall_time": time.time() - t0,
        })
        if cfg.log:
            cfg.log.write(
                f"iter {len(history) - 1}: region {region_idx} "
                f"gamma*={rep.gamma_star:.6g} certified={rep.certified}\n")
        if cfg.checkpoint and len(history) % cfg.checkpoint_every == 0:
            cfg.checkpoint(policy, V, history)
        if rep.certified:
            region_idx += 1
            last_gamma = np.inf
            bad = 0
            if region_idx == len(schedule):
                return policy, V, True, history
            continue
        if steps_taken >= cfg.max_iterations:
            return policy, V, False, history
        g = grad_fixed_pattern(dyn, policy, V, rep.counterexample, cfg.eps,
                               layout)
        theta = theta - step * g
        policy, V = layout.unpack(theta)
        V = project_parameters(V)
        theta = layout.pack(policy, V)
        steps_taken += 1
        if rep.gamma_star >= last_gamma - 1e-12:
            bad += 1
            if bad >= cfg.patience:
                step = max(step / 2.0, cfg.min_step)
                bad = 0
        else:
            bad = 0
        last_gamma = rep.gamma_star


# ---------------------------------------------------------------------------
# Baseline comparison mode: a free-form relu network as the candidate.
# Without the monotonic structure nothing guarantees positivity, so every
# iteration needs a second MILP that checks min V > 0 away from the
# equilibrium. Kept for runtime comparisons against the structured mode.

from .milp import MilpModel, encode_linf, propagate_bounds, encode_network
from .solver import MilpOptions, solve_milp
from .verify import VerifyReport, encode_policy, encode_dynamics


def relu_candidate_value(net, x_eq, x):
    """V(x) = phi(x - x_eq) - phi(0) for a free-form scalar network."""
    x = np.asarray(x, dtype=float)
    base = float(eval_pwl_network(net, np.zeros(net.input_dim))[0])
    d = x - x_eq
    if d.ndim == 2:
        return eval_pwl_network(net, d)[:, 0] - base
    return float(eval_pwl_network(net, d)[0]) - base


def _encode_shifted_net(m, net, x_vars, x_eq, box, prefix):
    """Output variable of phi(x - x_eq) plus the scalar phi(0) to subtract."""
    dbox = Box(box.lower - x_eq, box.upper - x_eq)
    d_vars = []
    for i, xv in enumerate(x_vars):
        dv = m.add_var(f"{prefix}_d{i}", float(dbox.lower[i]), float(dbox.upper[i]))
        m.add_constraint({dv: 1.0, xv: -1.0}, "=", -float(x_eq[i]),
                         name=f"{prefix}_d{i}_eq")
        d_vars.append(dv)
    bounds = propagate_bounds(net, dbox)
    out_vars, enc = encode_network(m, net, d_vars, bounds, prefix=prefix)
    base = float(eval_pwl_network(net, np.zeros(net.input_dim))[0])
    return d_vars, out_vars[0], enc, base


def verify_decrease_net(dyn, policy, net, region, eps,
                        certify_tol=CERTIFY_TOL, node_limit=200_000, log=None):
    """Decrease-condition check with a free-form relu candidate."""
    m = MilpModel(maximize=True)
    x_vars = [m.add_var(f"x{d}", region.lower[d], region.upper[d])
              for d in range(dyn.n_x)]
    u_vars, pol_enc = encode_policy(m, policy, x_vars, region)
    xn_vars, dyn_enc = encode_dynamics(m, dyn, x_vars, u_vars, region)
    xn_box = Box(np.array([m.lo[v] for v in xn_vars]),
                 np.array([m.up[v] for v in xn_vars]))
    _, out_x, enc_x, base = _encode_shifted_net(m, net, x_vars, dyn.x_eq,
                                                region, "bx")
    _, out_n, enc_n, _ = _encode_shifted_net(m, net, xn_vars, dyn.x_eq,
                                             xn_box, "bn")
    obj = {out_n: 1.0}
    obj[out_x] = obj.get(out_x, 0.0) - (1.0 - eps)
    m.set_objective(obj, const=-eps * base)

    def completion(lp_point):
        x = np.clip(np.array([lp_point[v] for v in x_vars]),
                    region.lower, region.upper)
        out = np.zeros(m.n_vars)
        u = pol_enc.complete(x, out)
        xn = dyn_enc.complete(x, u, out)
        enc_x.complete(x - dyn.x_eq, out)
        enc_n.complete(xn - dyn.x_eq, out)
        for var, val in zip(x_vars, x):
            out[var] = val
        return out

    sol = solve_milp(m, MilpOptions(completion=completion,
                                    node_limit=node_limit, log=log))
    if sol.status not in ("optimal", "node_limit"):
        raise RuntimeError(f"baseline decrease solve failed: {sol.status}")
    gamma_star = float(sol.best_bound)
    certified = sol.status == "optimal" and gamma_star <= certify_tol
    stats = {"status": sol.status, "nodes": sol.node_count,
             "binaries": m.n_binaries, "rows": m.n_rows}
    cex = None
    if sol.x is not None:
        point = np.array([sol.x[v] for v in x_vars])
        stats["argmax"] = point
        if not certified:
            cex = point
    return VerifyReport(certified, gamma_star, cex, stats)


def verify_positivity_net(net, x_eq, region, exclusion_radius,
                          positivity_tol=0.0, node_limit=200_000, log=None):
    """Minimum of the free-form candidate over the region minus a ball.

    Returns (positive, min_value, argmin). The free-form architecture has
    no structural positivity, hence this extra solve per iteration.
    """
    m = MilpModel(maximize=False)
    x_vars = [m.add_var(f"x{d}", region.lower[d], region.upper[d])
              for d in range(region.dim)]
    _, out, enc, base = _encode_shifted_net(m, net, x_vars, x_eq, region, "bp")
    q, linf_enc = encode_linf(m, x_vars, x_eq, region, prefix="ring")
    m.add_constraint({q: -1.0}, "<", -float(exclusion_radius), name="ring_min")
    m.set_objective({out: 1.0}, const=-base)

    def completion(lp_point):
        x = np.clip(np.array([lp_point[v] for v in x_vars]),
                    region.lower, region.upper)
        if np.max(np.abs(x - x_eq)) < exclusion_radius:
            d = int(np.argmax(np.abs(x - x_eq)))
            x[d] = x_eq[d] + np.sign(x[d] - x_eq[d] + 1e-12) * exclusion_radius
            x = np.clip(x, region.lower, region.upper)
            if np.max(np.abs(x - x_eq)) < exclusion_radius:
                return None
        out_vec = np.zeros(m.n_vars)
        enc.complete(x - x_eq, out_vec)
        linf_enc.complete(x, out_vec)
        for var, val in zip(x_vars, x):
            out_vec[var] = val
        return out_vec

    sol = solve_milp(m, MilpOptions(completion=completion,
                                    node_limit=node_limit, log=log))
    if sol.status == "infeasible":
        return True, np.inf, None
    if sol.status not in ("optimal", "node_limit"):
        raise RuntimeError(f"baseline positivity solve failed: {sol.status}")
    min_value = float(sol.best_bound)
    argmin = None if sol.x is None else np.array([sol.x[v] for v in x_vars])
    return min_value > positivity_tol, min_value, argmin


def _flatten_layers(nets):
    parts = []
    for net in nets:
        for W, b in net.layers:
            parts.append(W.ravel())
            parts.append(b)
    return np.concatenate(parts)


def _unflatten_layers(theta, nets):
    out = []
    i = 0
    for net in nets:
        layers = []
        for W, b in net.layers:
            Wn = theta[i : i + W.size].reshape(W.shape)
            i += W.size
            bn = theta[i : i + b.size].copy()
            i += b.size
            layers.append((Wn, bn))
        out.append(net.with_params(layers))
    return out


def train_minmax_baseline(dyn, policy, net, cfg, exclusion_radius=0.05):
    """Algorithm-1-style loop for the free-form relu candidate.

    Every iteration runs two MILPs (decrease and positivity); gradient
    steps descend whichever condition is violated. Returns
    (policy, net, certified, history) with milp_solves recorded per row.
    """
    schedule = cfg.region_schedule
    if not schedule:
        raise ValueError("region schedule must be a non-empty list")
    theta = _flatten_layers([policy.net, net])
    step = cfg.step_size
    history = []
    steps_taken = 0
    region_idx = 0
    t0 = time.time()
    while True:
        region = schedule[region_idx]
        dec = verify_decrease_net(dyn, policy, net, region, cfg.eps,
                                  certify_tol=cfg.certify_tol,
                                  node_limit=cfg.node_limit)
        positive, min_v, argmin = verify_positivity_net(
            net, dyn.x_eq, region, exclusion_radius,
            node_limit=cfg.node_limit)
        history.append({
            "iteration": len(history),
            "gamma_star": dec.gamma_star,
            "min_value": min_v,
            "region_index": region_idx,
            "certified": dec.certified and positive,
            "step_size": step,
            "milp_solves": 2,
            "wall_time": time.time() - t0,
        })
        if cfg.log:
            cfg.log.write(
                f"baseline iter {len(history) - 1}: gamma*={dec.gamma_star:.6g}"
                f" minV={min_v:.6g}\n")
        if dec.certified and positive:
            region_idx += 1
            if region_idx == len(schedule):
                return policy, net, True, history
            continue
        if steps_taken >= cfg.max_iterations:
            return policy, net, False, history
        grad = np.zeros_like(theta)
        if not dec.certified and dec.counterexample is not None:
            grad += _baseline_decrease_grad(dyn, policy, net,
                                            dec.counterexample, cfg.eps)
        if not positive and argmin is not None:
            grad += _baseline_positivity_grad(dyn, policy, net, argmin)
        theta = theta - step * grad
        policy_net, net = _unflatten_layers(theta, [policy.net, net])
        policy = PolicyModel(policy_net, policy.x_eq, policy.u_eq,
                             policy.u_min, policy.u_max)
        steps_taken += 1


def _baseline_decrease_grad(dyn, policy, net, x, eps):
    x = np.asarray(x, dtype=float)
    u_raw = eval_pwl_network(policy.net, x) - policy.phi_eq + policy.u_eq
    u = np.clip(u_raw, policy.u_min, policy.u_max)
    xn = dyn.step(x, u)
    dn = xn - dyn.x_eq
    dx = x - dyn.x_eq
    g_n, cot_dn = net_backward(net, dn, np.ones(1))
    g_x, _ = net_backward(net, dx, -(1.0 - eps) * np.ones(1))
    g_0, _ = net_backward(net, np.zeros(net.input_dim), -eps * np.ones(1))
    net_grads = [(a + b + c, d + e + f)
                 for (a, d), (b, e), (c, f) in zip(g_n, g_x, g_0)]
    _, cot_xu = net_backward(dyn.net, np.concatenate([x, u]), cot_dn)
    cot_u = cot_xu[dyn.n_x :] * ((u_raw > policy.u_min) & (u_raw < policy.u_max))
    p_x, _ = net_backward(policy.net, x, cot_u)
    p_e, _ = net_backward(policy.net, policy.x_eq, -cot_u)
    pol_grads = [(a + b, c + d) for (a, c), (b, d) in zip(p_x, p_e)]
    return np.concatenate([np.concatenate([dW.ravel(), db])
                           for dW, db in pol_grads + net_grads])


def _baseline_positivity_grad(dyn, policy, net, x):
    # push the candidate up where it dips: descend -V(x)
    d = np.asarray(x, dtype=float) - dyn.x_eq
    g_d, _ = net_backward(net, d, -np.ones(1))
    g_0, _ = net_backward(net, np.zeros(net.input_dim), np.ones(1))
    net_grads = [(a + b, c + d2) for (a, c), (b, d2) in zip(g_d, g_0)]
    zeros = [(np.zeros_like(W), np.zeros_like(b)) for W, b in policy.net.layers]
    return np.concatenate([np.concatenate([dW.ravel(), db])
                           for dW, db in zeros + net_grads])
