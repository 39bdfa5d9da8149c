"""Certification of the Lyapunov decrease condition on closed-form pairs.

Fixtures are built so the true worst case is known analytically or
computable by direct evaluation on the breakpoint grid, giving an oracle
that shares nothing with the MILP route.
"""

import numpy as np
import pytest

from lyapcert.lyapunov import MonotonicLayer, MonotonicLyapunov, MonotonicUnit
from lyapcert.lyapunov import eval_lyapunov, level_bounding_box
from lyapcert.pwl import Box, DimensionError, DynamicsModel, PolicyModel, PwlNetwork
from lyapcert.verify import CERTIFY_TOL, verify_box, verify_sublevel

from helpers import abs_sum_lyapunov


def affine_policy(K, x_eq, u_eq, lo, hi):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    net = PwlNetwork([(K, np.zeros(K.shape[0]))])
    return PolicyModel(net, x_eq, u_eq, np.asarray(lo, float), np.asarray(hi, float))


def scalar_contraction(rho=0.9):
    """x+ = rho * x and a do-nothing policy, both as plain affine networks."""
    dyn_net = PwlNetwork([(np.array([[rho, 0.0]]), np.zeros(1))])
    dyn = DynamicsModel(dyn_net, np.zeros(1), np.zeros(1))
    policy = affine_policy([[0.0]], np.zeros(1), np.zeros(1), [-1.0], [1.0])
    return dyn, policy


def linear_contraction_2d(rho=0.9, x_eq=None):
    """x+ = x_eq + rho (x - x_eq) through a relu layer that is always active.

    Large positive first-layer biases keep every preactivation positive over
    any moderate box, so the network is exactly affine there and the encoder
    needs no binaries for it.
    """
    if x_eq is None:
        x_eq = np.zeros(2)
    x_eq = np.asarray(x_eq, dtype=float)
    W1 = np.eye(3)
    b1 = np.full(3, 10.0)
    W2 = np.array([[rho, 0.0, 0.0], [0.0, rho, 0.05]])
    b2 = -W2 @ (b1 + np.array([x_eq[0], x_eq[1], 0.0]))
    net = PwlNetwork([(W1, b1), (W2, b2)], leak=0.1)
    dyn = DynamicsModel(net, x_eq, np.zeros(1))
    policy = affine_policy([[0.0, 0.0]], x_eq, np.zeros(1), [-1.0], [1.0])
    return dyn, policy


def kinked_scalar_pair():
    """Exact x+ = 0.9x built from two sign-indefinite relu neurons, paired
    with a two-segment candidate, so verification has to branch."""
    leak = 0.1
    W1 = np.array([[1.0, 0.0], [-1.0, 0.0]])
    W2 = np.array([[0.9 / (1 + leak), -0.9 / (1 + leak)]])
    net = PwlNetwork([(W1, np.zeros(2)), (W2, np.zeros(1))], leak=leak)
    dyn = DynamicsModel(net, np.zeros(1), np.zeros(1))
    policy = affine_policy([[0.0]], np.zeros(1), np.zeros(1), [-1.0], [1.0])
    unit = lambda: MonotonicUnit([1.0, 0.5], [0.0, 0.3], plus_class=True)
    layer = MonotonicLayer([(np.array([1.0]), 1.0, unit()),
                            (np.array([-1.0]), 1.0, unit())])
    V = MonotonicLyapunov([layer], np.zeros(1))
    return dyn, policy, V


def gamma(dyn, policy, V, x, eps):
    x = np.asarray(x, dtype=float)
    xn = dyn.step(x, policy.act(x))
    return eval_lyapunov(V, xn) - (1 - eps) * eval_lyapunov(V, x)


def test_scalar_contraction_certified():
    dyn, policy = scalar_contraction()
    V = abs_sum_lyapunov(n_x=1)
    rep = verify_box(dyn, policy, V, Box([-1.0], [1.0]), eps=0.05)
    assert rep.certified
    assert bool(rep)
    assert rep.counterexample is None
    assert abs(rep.gamma_star) <= 1e-9


def test_scalar_contraction_violated_at_boundary():
    # decrease fails by (rho - (1 - eps)) |x|, worst at |x| = 1
    dyn, policy = scalar_contraction()
    V = abs_sum_lyapunov(n_x=1)
    rep = verify_box(dyn, policy, V, Box([-1.0], [1.0]), eps=0.2)
    assert not rep.certified
    assert not bool(rep)
    assert abs(rep.gamma_star - 0.1) <= 1e-6
    cex = rep.counterexample
    assert cex is not None and abs(abs(cex[0]) - 1.0) <= 1e-6
    assert gamma(dyn, policy, V, cex, 0.2) >= rep.gamma_star - 1e-6


def test_point_region_is_certified():
    dyn, policy = scalar_contraction()
    V = abs_sum_lyapunov(n_x=1)
    rep = verify_box(dyn, policy, V, Box([0.0], [0.0]), eps=0.05)
    assert rep.certified
    assert abs(rep.gamma_star) <= 1e-9


def test_eps_and_equilibrium_validation():
    dyn, policy = scalar_contraction()
    V = abs_sum_lyapunov(n_x=1)
    box = Box([-1.0], [1.0])
    for eps in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            verify_box(dyn, policy, V, box, eps=eps)
    shifted = abs_sum_lyapunov(n_x=1, x_eq=np.array([0.5]))
    with pytest.raises(ValueError):
        verify_box(dyn, policy, shifted, box, eps=0.05)


def test_2d_contraction_certified():
    dyn, policy = linear_contraction_2d()
    V = abs_sum_lyapunov(n_x=2)
    region = Box([-0.2, -0.2], [0.2, 0.2])
    rep = verify_box(dyn, policy, V, region, eps=0.05)
    assert rep.certified
    assert abs(rep.gamma_star) <= 1e-9
    # the dynamics and the clamp stay on one side, only the candidate branches
    assert rep.stats["binaries"] == 8


def test_2d_violation_matches_direct_evaluation():
    dyn, policy = linear_contraction_2d()
    V = abs_sum_lyapunov(n_x=2)
    region = Box([-0.2, -0.2], [0.2, 0.2])
    rep = verify_box(dyn, policy, V, region, eps=0.2)
    assert not rep.certified
    # gamma(x) = (0.9 - 0.8) ||x||_1, maximal at a corner
    assert abs(rep.gamma_star - 0.04) <= 1e-6
    cex = rep.counterexample
    assert region.contains(cex)
    assert abs(np.abs(cex).sum() - 0.4) <= 1e-6
    assert gamma(dyn, policy, V, cex, 0.2) >= rep.gamma_star - 1e-6


def test_2d_certified_soundness_samples():
    dyn, policy = linear_contraction_2d()
    V = abs_sum_lyapunov(n_x=2)
    region = Box([-0.2, -0.2], [0.2, 0.2])
    rep = verify_box(dyn, policy, V, region, eps=0.05)
    assert rep.certified
    rng = np.random.default_rng(11)
    worst = max(
        gamma(dyn, policy, V, region.sample(rng), 0.05) for _ in range(100_000)
    )
    assert worst <= CERTIFY_TOL + 1e-9


def test_nonzero_equilibrium():
    x_eq = np.array([1.0, -2.0])
    dyn, policy = linear_contraction_2d(x_eq=x_eq)
    V = abs_sum_lyapunov(n_x=2, x_eq=x_eq)
    region = Box(x_eq - 0.2, x_eq + 0.2)
    assert verify_box(dyn, policy, V, region, eps=0.05).certified
    rep = verify_box(dyn, policy, V, region, eps=0.2)
    assert not rep.certified
    assert abs(rep.gamma_star - 0.04) <= 1e-6
    assert abs(np.abs(rep.counterexample - x_eq).sum() - 0.4) <= 1e-6


def test_l1_term_in_candidate():
    dyn, policy = linear_contraction_2d()
    V = abs_sum_lyapunov(n_x=2, lam=0.3, R=np.eye(2))
    region = Box([-0.2, -0.2], [0.2, 0.2])
    assert verify_box(dyn, policy, V, region, eps=0.05).certified
    rep = verify_box(dyn, policy, V, region, eps=0.2)
    # V = 1.3 ||x||_1, so the violation scales accordingly
    assert abs(rep.gamma_star - 0.052) <= 1e-6


def test_branching_fixture_certified():
    dyn, policy, V = kinked_scalar_pair()
    rep = verify_box(dyn, policy, V, Box([-1.0], [1.0]), eps=0.05)
    assert rep.certified
    assert rep.stats["binaries"] >= 10


def test_branching_fixture_matches_breakpoint_oracle():
    dyn, policy, V = kinked_scalar_pair()
    rep = verify_box(dyn, policy, V, Box([-1.0], [1.0]), eps=0.3)
    # gamma is piecewise linear; its maximum sits on a breakpoint of either
    # candidate evaluation or on the region boundary
    pts = [0.0, 0.3, -0.3, 1 / 3, -1 / 3, 1.0, -1.0]
    oracle = max(gamma(dyn, policy, V, np.array([p]), 0.3) for p in pts)
    assert not rep.certified
    assert oracle > 0
    assert abs(rep.gamma_star - oracle) <= 1e-6
    assert gamma(dyn, policy, V, rep.counterexample, 0.3) >= rep.gamma_star - 1e-6


def test_verify_is_deterministic():
    dyn, policy, V = kinked_scalar_pair()
    a = verify_box(dyn, policy, V, Box([-1.0], [1.0]), eps=0.3)
    b = verify_box(dyn, policy, V, Box([-1.0], [1.0]), eps=0.3)
    assert a.gamma_star == b.gamma_star
    assert np.array_equal(a.counterexample, b.counterexample)
    assert a.stats["nodes"] == b.stats["nodes"]


def test_sublevel_scalar_certified():
    dyn, policy = scalar_contraction()
    V = abs_sum_lyapunov(n_x=1)
    box = level_bounding_box(V, 0.5)
    assert np.allclose(box.lower, [-0.5]) and np.allclose(box.upper, [0.5])
    rep = verify_sublevel(dyn, policy, V, r=0.5, eps=0.05)
    assert rep.certified
    assert rep.stats["level"] == 0.5


def test_sublevel_scalar_violated():
    dyn, policy = scalar_contraction()
    V = abs_sum_lyapunov(n_x=1)
    rep = verify_sublevel(dyn, policy, V, r=0.5, eps=0.2)
    assert not rep.certified
    assert abs(rep.gamma_star - 0.05) <= 1e-6
    cex = rep.counterexample
    assert abs(abs(cex[0]) - 0.5) <= 1e-6
    assert eval_lyapunov(V, cex) <= 0.5 + 1e-9


def test_sublevel_tighter_than_box_on_level_bounding_box():
    dyn, policy = linear_contraction_2d()
    V = abs_sum_lyapunov(n_x=2)
    r = 0.3
    box_rep = verify_box(dyn, policy, V, level_bounding_box(V, r), eps=0.2)
    sub_rep = verify_sublevel(dyn, policy, V, r=r, eps=0.2)
    assert sub_rep.gamma_star <= box_rep.gamma_star + 1e-9
    # the level constraint actually bites: the box corner is outside the set
    assert sub_rep.gamma_star < box_rep.gamma_star - 1e-3
    assert abs(sub_rep.gamma_star - 0.03) <= 1e-6
    assert eval_lyapunov(V, sub_rep.counterexample) <= r + 1e-9


def test_sublevel_exclusion_ring():
    dyn, policy = linear_contraction_2d()
    V = abs_sum_lyapunov(n_x=2)
    rep = verify_sublevel(dyn, policy, V, r=0.3, eps=0.2, exclusion_radius=0.1)
    assert not rep.certified
    assert abs(rep.gamma_star - 0.03) <= 1e-6
    assert np.abs(rep.counterexample).max() >= 0.1 - 1e-9


def test_sublevel_vacuous_when_exclusion_swallows_level_set():
    dyn, policy = linear_contraction_2d()
    V = abs_sum_lyapunov(n_x=2)
    rep = verify_sublevel(dyn, policy, V, r=0.3, eps=0.2, exclusion_radius=0.4)
    assert rep.certified
    assert rep.gamma_star == -np.inf
    assert rep.counterexample is None


def test_sublevel_domain_check():
    dyn, policy = scalar_contraction()
    V = abs_sum_lyapunov(n_x=1)
    with pytest.raises(ValueError):
        verify_sublevel(dyn, policy, V, r=0.5, eps=0.05,
                        domain=Box([-0.3], [0.3]))
    rep = verify_sublevel(dyn, policy, V, r=0.5, eps=0.05,
                          domain=Box([-1.0], [1.0]))
    assert rep.certified


def test_region_dimension_mismatch():
    dyn, policy = scalar_contraction()
    V = abs_sum_lyapunov(n_x=1)
    with pytest.raises(DimensionError):
        verify_box(dyn, policy, V, Box([-1.0, -1.0], [1.0, 1.0]), eps=0.05)
