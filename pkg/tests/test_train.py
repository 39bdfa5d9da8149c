"""Gradient machinery, dynamics fitting, LQR initialization, min-max loop."""

import numpy as np
import pytest

from lyapcert.lyapunov import eval_lyapunov
from lyapcert.pwl import Box, DynamicsModel, PolicyModel, PwlNetwork, eval_pwl_network
from lyapcert.systems import SystemSpec, make_pendulum
from lyapcert.train import (
    ParameterLayout,
    TrainConfig,
    dare_fixed_point,
    fit_dynamics,
    grad_fixed_pattern,
    linearize_discrete,
    lqr_gain,
    lqr_init,
    lyapunov_backward,
    nested_boxes,
    net_backward,
    relu_candidate_value,
    train_minmax,
    train_minmax_baseline,
    verify_decrease_net,
    verify_positivity_net,
)
from lyapcert.verify import verify_box

from helpers import abs_sum_lyapunov, random_lyapunov


def random_net(rng, dims, leak=0.1):
    layers = []
    for i in range(len(dims) - 1):
        layers.append((rng.normal(size=(dims[i + 1], dims[i])),
                       rng.normal(size=dims[i + 1])))
    return PwlNetwork(layers, leak=leak)


def test_net_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        net = random_net(rng, [3, 5, 4, 2])
        x = rng.normal(size=3)
        cot = rng.normal(size=2)
        grads, cot_x = net_backward(net, x, cot)

        def value(n):
            return float(cot @ eval_pwl_network(n, x))

        h = 1e-6
        for li, (W, b) in enumerate(net.layers):
            for idx in [(0, 0), (W.shape[0] - 1, W.shape[1] - 1)]:
                Wp = [((w.copy(), bb.copy())) for w, bb in net.layers]
                Wp[li][0][idx] += h
                Wm = [((w.copy(), bb.copy())) for w, bb in net.layers]
                Wm[li][0][idx] -= h
                fd = (value(net.with_params(Wp)) - value(net.with_params(Wm))) / (2 * h)
                assert abs(grads[li][0][idx] - fd) <= 1e-5 * max(1, abs(fd))
        for d in range(3):
            e = np.zeros(3)
            e[d] = h
            fd = (float(cot @ eval_pwl_network(net, x + e))
                  - float(cot @ eval_pwl_network(net, x - e))) / (2 * h)
            assert abs(cot_x[d] - fd) <= 1e-5 * max(1, abs(fd))


def test_lyapunov_backward_value_and_state_gradient():
    rng = np.random.default_rng(5)
    for _ in range(5):
        V = random_lyapunov(rng, n_x=2, extra_dirs=2)
        x = V.x_eq + rng.normal(size=2)
        value, dx, _ = lyapunov_backward(V, x)
        assert abs(value - eval_lyapunov(V, x)) <= 1e-12
        h = 1e-6
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            fd = (eval_lyapunov(V, x + e) - eval_lyapunov(V, x - e)) / (2 * h)
            assert abs(dx[d] - fd) <= 1e-5 * max(1.0, abs(fd))


def scalar_pair(rng, policy_gain=0.0):
    dyn_net = PwlNetwork([(np.array([[1.0, 1.0]]), np.zeros(1))])
    dyn = DynamicsModel(dyn_net, np.zeros(1), np.zeros(1))
    pol_net = PwlNetwork([(np.array([[policy_gain]]), np.zeros(1))])
    policy = PolicyModel(pol_net, np.zeros(1), np.zeros(1),
                         np.array([-1.0]), np.array([1.0]))
    return dyn, policy


def gamma_hat(dyn, policy, V, x, eps):
    u = policy.act(x)
    return (eval_lyapunov(V, dyn.step(x, u))
            - (1 - eps) * eval_lyapunov(V, x))


def test_grad_fixed_pattern_matches_finite_differences():
    rng = np.random.default_rng(9)
    checked = 0
    for trial in range(8):
        net = random_net(rng, [3, 6, 2])
        dyn = DynamicsModel(net, np.zeros(2), np.zeros(1))
        pol = random_net(rng, [2, 4, 1])
        policy = PolicyModel(pol, np.zeros(2), np.zeros(1),
                             np.array([-5.0]), np.array([5.0]))
        V = random_lyapunov(rng, n_x=2, extra_dirs=1, lam=0.1)
        V = type(V)(V.layers, np.zeros(2), R=V.R, lam=V.lam)
        layout = ParameterLayout(policy, V)
        theta0 = layout.pack(policy, V)
        x = rng.uniform(-0.8, 0.8, size=2)
        if abs(np.max(np.abs(policy.act(x))) - 5.0) < 1e-6:
            continue  # saturated controls make the pattern flip under h
        g = grad_fixed_pattern(dyn, policy, V, x, 0.05, layout)
        h = 1e-6
        idxs = rng.choice(layout.size, size=min(12, layout.size), replace=False)
        ok = True
        for i in idxs:
            e = np.zeros(layout.size)
            e[i] = h
            pp, Vp = layout.unpack(theta0 + e)
            pm, Vm = layout.unpack(theta0 - e)
            fd = (gamma_hat(dyn, pp, Vp, x, 0.05)
                  - gamma_hat(dyn, pm, Vm, x, 0.05)) / (2 * h)
            if abs(g[i] - fd) > 1e-4 * max(1.0, abs(fd)):
                ok = False
        assert ok, f"gradient mismatch on trial {trial}"
        checked += 1
    assert checked >= 5


def test_parameter_layout_round_trip():
    rng = np.random.default_rng(2)
    pol = random_net(rng, [2, 3, 1])
    policy = PolicyModel(pol, np.zeros(2), np.zeros(1),
                         np.array([-1.0]), np.array([1.0]))
    V = random_lyapunov(rng, n_x=2)
    V = type(V)(V.layers, np.zeros(2), R=V.R, lam=V.lam)
    layout = ParameterLayout(policy, V)
    theta = layout.pack(policy, V)
    p2, V2 = layout.unpack(theta)
    assert np.array_equal(layout.pack(p2, V2), theta)
    x = rng.normal(size=2)
    assert abs(eval_lyapunov(V, x) - eval_lyapunov(V2, x)) <= 1e-12
    assert np.allclose(policy.act(x), p2.act(x), atol=1e-12)


def linear_system(A, B, dt=0.1):
    A, B = np.asarray(A, float), np.asarray(B, float)

    def xdot(x, u, p):
        return ((A - np.eye(A.shape[0])) @ x + B @ u) / dt

    n, m_u = A.shape[0], B.shape[1]
    return SystemSpec("linear", xdot, np.zeros(n), np.zeros(m_u),
                      Box(-np.ones(n), np.ones(n)),
                      Box(-np.ones(m_u), np.ones(m_u)), {}, dt=dt)


def test_fit_dynamics_exact_on_affine_target():
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[0.0], [0.2]])
    system = linear_system(A, B)
    model = fit_dynamics(system, arch=(), samples=500, seed=1)
    assert model.fit_report["max_residual"] <= 1e-8
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-1, 1, size=2)
        u = rng.uniform(-1, 1, size=1)
        assert np.allclose(model.step(x, u), A @ x + B @ u, atol=1e-8)
    assert np.array_equal(model.step(system.x_eq, system.u_eq), system.x_eq)


def test_fit_dynamics_sample_count_precondition():
    system = linear_system(np.eye(2), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        fit_dynamics(system, arch=(16, 16), samples=100)


def test_fit_dynamics_pendulum_residual():
    system = make_pendulum()
    model = fit_dynamics(system, arch=(16, 16), samples=50_000, seed=0)
    assert model.fit_report["max_residual"] < 1e-2
    # equilibrium is pinned no matter the fit
    assert np.array_equal(model.step(system.x_eq, system.u_eq), system.x_eq)


def test_dare_scalar_fixed_point():
    S = dare_fixed_point(np.array([[0.5]]), np.array([[1.0]]),
                         np.array([[1.0]]), np.array([[1.0]]))
    s = float(S[0, 0])
    # the scalar equation reduces to s^2 - 0.25 s - 1 = 0
    assert abs(s - (0.25 + np.sqrt(0.0625 + 4.0)) / 2.0) <= 1e-9
    assert abs(s - (1.0 + 0.25 * s - 0.25 * s ** 2 / (1.0 + s))) <= 1e-9
    K = lqr_gain(np.array([[0.5]]), np.array([[1.0]]), S, np.array([[1.0]]))
    assert abs(float(K[0, 0]) - 0.5 * s / (1.0 + s)) <= 1e-9


def test_dare_double_integrator_stabilizes():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    S = dare_fixed_point(A, B, np.eye(2), np.eye(1))
    K = lqr_gain(A, B, S, np.eye(1))
    eigs = np.linalg.eigvals(A - B @ K)
    assert np.max(np.abs(eigs)) < 1.0


def test_dare_divergence_reported():
    with pytest.raises(ValueError):
        dare_fixed_point(np.array([[2.0, 0.0], [0.0, 2.0]]),
                         np.zeros((2, 1)), np.eye(2), np.eye(1))


def test_linearize_discrete_pendulum():
    system = make_pendulum()
    A, B = linearize_discrete(system)
    assert np.allclose(A, [[1.0, 0.01], [0.0981, 0.999]], atol=1e-6)
    assert np.allclose(B, [[0.0], [0.01]], atol=1e-9)


def test_lqr_init_pendulum():
    system = make_pendulum()
    dyn = fit_dynamics(system, arch=(), samples=500, seed=0)
    policy, V = lqr_init(system, dyn, policy_arch=(), seed=0)
    A, B = linearize_discrete(system)
    K = V.lqr["K"]
    eigs = np.linalg.eigvals(A - B @ K)
    assert np.max(np.abs(eigs)) < 1.0
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.uniform(system.domain.lower, system.domain.upper)
        want = np.clip(-K @ (x - system.x_eq) + system.u_eq,
                       system.control.lower, system.control.upper)
        assert np.allclose(policy.act(x), want, atol=1e-9)
    assert abs(np.linalg.det(V.R)) > 1e-8
    V.validate()
    assert eval_lyapunov(V, system.x_eq) == 0.0
    assert eval_lyapunov(V, system.x_eq + [0.3, 0.2]) > 0.0


def test_nested_boxes_schedule():
    domain = Box([-2.0, 0.0], [2.0, 4.0])
    x_eq = np.array([0.0, 1.0])
    boxes = nested_boxes(domain, x_eq, n=4)
    assert len(boxes) == 4
    for a, b in zip(boxes[:-1], boxes[1:]):
        assert b.contains_box(a)
    assert np.allclose(boxes[-1].lower, domain.lower)
    assert np.allclose(boxes[-1].upper, domain.upper)
    for b in boxes:
        assert b.contains(x_eq)


def contraction_pair():
    """Exact x+ = 0.9x with a do-nothing trainable policy."""
    dyn_net = PwlNetwork([(np.array([[0.9, 0.0]]), np.zeros(1))])
    dyn = DynamicsModel(dyn_net, np.zeros(1), np.zeros(1))
    pol_net = PwlNetwork([(np.array([[0.0]]), np.zeros(1))])
    policy = PolicyModel(pol_net, np.zeros(1), np.zeros(1),
                         np.array([-1.0]), np.array([1.0]))
    return dyn, policy


def test_train_minmax_already_certified_returns_immediately():
    dyn, policy = contraction_pair()
    V = abs_sum_lyapunov(n_x=1)
    cfg = TrainConfig(eps=0.05, region_schedule=[Box([-1.0], [1.0])])
    p2, V2, certified, history = train_minmax(dyn, policy, V, cfg)
    assert certified
    assert len(history) == 1 and history[0]["certified"]
    assert history[0]["milp_solves"] == 1
    x = np.array([0.4])
    assert abs(eval_lyapunov(V2, x) - eval_lyapunov(V, x)) <= 1e-12


def test_train_minmax_converges_on_scalar_integrator():
    # x+ = x + u with u == 0 initially: gamma > 0 until the policy learns
    dyn, policy = scalar_pair(np.random.default_rng(0))
    V = abs_sum_lyapunov(n_x=1)
    domain = Box([-0.5], [0.5])
    cfg = TrainConfig(step_size=0.05, max_iterations=500, eps=0.01,
                      region_schedule=nested_boxes(domain, np.zeros(1), n=3))
    p2, V2, certified, history = train_minmax(dyn, policy, V, cfg)
    assert certified
    assert history[-1]["certified"]
    assert history[-1]["gamma_star"] <= 1e-6
    rep = verify_box(dyn, p2, V2, domain, eps=0.01)
    assert rep.certified
    assert all(row["milp_solves"] == 1 for row in history)


def test_train_minmax_budget_exhaustion():
    dyn, policy = scalar_pair(np.random.default_rng(0))
    V = abs_sum_lyapunov(n_x=1)
    cfg = TrainConfig(max_iterations=0, eps=0.01,
                      region_schedule=[Box([-0.5], [0.5])])
    _, _, certified, history = train_minmax(dyn, policy, V, cfg)
    assert not certified
    assert len(history) == 1


def test_single_step_does_not_blow_up_gamma():
    dyn, policy = scalar_pair(np.random.default_rng(0))
    V = abs_sum_lyapunov(n_x=1)
    region = Box([-0.5], [0.5])
    rep = verify_box(dyn, policy, V, region, eps=0.01)
    assert not rep.certified
    layout = ParameterLayout(policy, V)
    g = grad_fixed_pattern(dyn, policy, V, rep.counterexample, 0.01, layout)
    h = 1e-5
    theta = layout.pack(policy, V) - h * g
    p2, V2 = layout.unpack(theta)
    rep2 = verify_box(dyn, p2, V2, region, eps=0.01)
    assert rep2.gamma_star <= rep.gamma_star + 10 * h * np.linalg.norm(g)


def abs_net():
    # phi(d) = relu(d) + relu(-d) = |d|
    return PwlNetwork([(np.array([[1.0], [-1.0]]), np.zeros(2)),
                       (np.array([[1.0, 1.0]]), np.zeros(1))], leak=0.0)


def test_baseline_decrease_agrees_with_structured_verify():
    dyn_net = PwlNetwork([(np.array([[0.9, 0.0]]), np.zeros(1))])
    dyn = DynamicsModel(dyn_net, np.zeros(1), np.zeros(1))
    pol_net = PwlNetwork([(np.array([[0.0]]), np.zeros(1))])
    policy = PolicyModel(pol_net, np.zeros(1), np.zeros(1),
                         np.array([-1.0]), np.array([1.0]))
    rep = verify_decrease_net(dyn, policy, abs_net(), Box([-1.0], [1.0]),
                              eps=0.2)
    assert not rep.certified
    assert abs(rep.gamma_star - 0.1) <= 1e-6
    rep2 = verify_decrease_net(dyn, policy, abs_net(), Box([-1.0], [1.0]),
                               eps=0.05)
    assert rep2.certified


def test_baseline_positivity_check():
    positive, min_v, _ = verify_positivity_net(
        abs_net(), np.zeros(1), Box([-1.0], [1.0]), exclusion_radius=0.05)
    assert positive
    assert abs(min_v - 0.05) <= 1e-6
    flipped = PwlNetwork([(np.array([[1.0], [-1.0]]), np.zeros(2)),
                          (np.array([[-1.0, -1.0]]), np.zeros(1))], leak=0.0)
    positive, min_v, argmin = verify_positivity_net(
        flipped, np.zeros(1), Box([-1.0], [1.0]), exclusion_radius=0.05)
    assert not positive
    assert min_v < 0
    assert argmin is not None


def test_baseline_issues_two_milps_per_iteration():
    dyn, policy = contraction_pair()
    cfg = TrainConfig(eps=0.05, max_iterations=2,
                      region_schedule=[Box([-1.0], [1.0])])
    _, _, certified, history = train_minmax_baseline(dyn, policy, abs_net(),
                                                     cfg)
    assert certified
    assert all(row["milp_solves"] == 2 for row in history)


def test_relu_candidate_value_zero_at_equilibrium():
    net = abs_net()
    assert relu_candidate_value(net, np.zeros(1), np.zeros(1)) == 0.0
    assert abs(relu_candidate_value(net, np.zeros(1), np.array([0.3])) - 0.3) <= 1e-12
