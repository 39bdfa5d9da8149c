"""Benchmark system dynamics, discretization, and closed-loop rollouts."""

import numpy as np
import pytest

from lyapcert.pwl import PolicyModel, PwlNetwork
from lyapcert.systems import (
    SYSTEMS,
    Trajectory,
    cartpole_energy,
    make_cartpole,
    make_path_following,
    make_pendulum,
    make_third_order,
    simulate_closed_loop,
    step_system,
)

from helpers import abs_sum_lyapunov


class ConstantPolicy:
    def __init__(self, u):
        self.u = np.atleast_1d(np.asarray(u, dtype=float))

    def act(self, x):
        return self.u


def test_equilibria_are_fixed_points():
    for make in SYSTEMS.values():
        spec = make()
        nxt = step_system(spec, spec.x_eq, spec.u_eq)
        assert np.allclose(nxt, spec.x_eq, atol=1e-12), spec.name


def test_pendulum_euler_step_by_hand():
    spec = make_pendulum()
    nxt = step_system(spec, np.array([np.pi, 1.0]), np.array([0.0]))
    # theta advances by dt * omega; omega loses only the damping term at pi
    assert abs(nxt[0] - (np.pi + 0.01)) <= 1e-12
    assert abs(nxt[1] - 0.999) <= 1e-12


def test_path_following_equilibrium_control_cancels_curvature():
    spec = make_path_following()
    assert spec.u_eq[0] == 6.0
    nxt = step_system(spec, np.zeros(2), np.array([6.0]))
    assert np.allclose(nxt, np.zeros(2), atol=1e-12)


def test_third_order_vector_field():
    spec = make_third_order()
    d = spec.xdot(np.array([2.0, -1.0, 0.5]), np.array([4.0]))
    assert np.allclose(d, [-1.0, 0.5, 0.5 * 4.0 + 4.0])


def test_domains_and_limits():
    pend = make_pendulum()
    assert np.allclose(pend.domain.lower, [0.0, -5.0])
    assert np.allclose(pend.domain.upper, [2 * np.pi, 5.0])
    assert np.allclose(pend.control.lower, [-10.0])
    path = make_path_following()
    assert np.allclose(path.domain.upper, [0.8, 0.8])
    third = make_third_order()
    assert np.allclose(third.domain.upper, [1.5, 1.5, 2.0])
    assert np.allclose(third.control.upper, [30.0])
    cart = make_cartpole()
    assert np.allclose(cart.domain.upper, [1.0, np.pi / 6, 1.0, 1.0])
    assert np.allclose(cart.control.upper, [30.0])


def test_cartpole_energy_drift_scales_with_dt_squared():
    x = np.array([0.0, 0.3, 0.2, -0.1])
    u = np.zeros(1)
    drifts = []
    for dt in (0.01, 0.005):
        spec = make_cartpole(dt=dt)
        e0 = cartpole_energy(spec, x)
        e1 = cartpole_energy(spec, step_system(spec, x, u))
        drifts.append(abs(e1 - e0))
    ratio = drifts[0] / drifts[1]
    assert 3.0 <= ratio <= 5.0


def test_finite_input_required():
    spec = make_pendulum()
    with pytest.raises(ValueError):
        step_system(spec, np.array([np.nan, 0.0]), np.array([0.0]))


def test_rollout_at_equilibrium_is_constant():
    spec = make_pendulum()
    traj = simulate_closed_loop(spec, ConstantPolicy([0.0]), spec.x_eq, 50)
    assert len(traj) == 51
    assert np.allclose(traj.states, spec.x_eq, atol=1e-12)
    assert not traj.escaped
    assert np.allclose(np.diff(traj.times), spec.dt)


def test_rollout_records_lyapunov_values_and_limits():
    spec = make_pendulum()
    net = PwlNetwork([(np.array([[-30.0, -6.0]]), np.zeros(1))])
    policy = PolicyModel(net, spec.x_eq, spec.u_eq,
                         spec.control.lower, spec.control.upper)
    V = abs_sum_lyapunov(n_x=2, x_eq=spec.x_eq)
    traj = simulate_closed_loop(spec, policy, np.array([np.pi - 0.3, 0.0]),
                                200, V=V)
    assert traj.values is not None and traj.values.shape == (len(traj),)
    assert traj.values[0] >= traj.values[-1] >= 0.0
    assert np.all(np.abs(traj.controls) <= 10.0 + 1e-12)
    assert traj.controls.shape == (len(traj) - 1, 1)


def test_rollout_truncates_on_escape():
    spec = make_pendulum()
    traj = simulate_closed_loop(spec, ConstantPolicy([10.0]),
                                np.array([np.pi / 2, 3.0]), 5000)
    assert traj.escaped
    assert len(traj) < 5001


def test_trajectory_length_consistency():
    t = Trajectory(np.zeros((4, 2)), np.zeros((3, 1)), np.arange(4.0))
    assert len(t) == 4 and t.controls.shape[0] == 3
