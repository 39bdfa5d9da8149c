"""Benchmark control systems: continuous dynamics, Euler discretization,
state/control boxes, and closed-loop rollouts under the true model.

State conventions follow the usual benchmarks: the pendulum stabilizes the
upright position theta = pi; the cart pole stabilizes the pole upright at
theta = 0. All four systems use a single control input.
"""

import numpy as np

from .lyapunov import eval_lyapunov
from .pwl import Box


class SystemSpec:
    """Continuous-time system with a forward-Euler discretization.

    xdot(x, u) returns the state derivative; step_system integrates one
    dt step. x_eq/u_eq must be a fixed point of the discretized map.
    """

    def __init__(self, name, xdot, x_eq, u_eq, domain, control, params, dt=0.01):
        self.name = name
        self._xdot = xdot
        self.x_eq = np.asarray(x_eq, dtype=float)
        self.u_eq = np.asarray(u_eq, dtype=float)
        self.domain = domain
        self.control = control
        self.params = dict(params)
        self.dt = float(dt)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not domain.contains(self.x_eq):
            raise ValueError("equilibrium state outside the domain")
        if not control.contains(self.u_eq):
            raise ValueError("equilibrium control outside the limits")

    @property
    def n_x(self):
        return self.domain.dim

    @property
    def n_u(self):
        return self.control.dim

    def xdot(self, x, u):
        return self._xdot(np.asarray(x, dtype=float),
                          np.asarray(u, dtype=float), self.params)


def step_system(spec, x, u):
    """One forward-Euler step of the continuous dynamics."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("state and control must be finite")
    return x + spec.dt * spec.xdot(x, u)


def make_pendulum(dt=0.01, m=1.0, b=0.1, g=9.81, l=1.0):
    def xdot(x, u, p):
        theta, omega = x
        acc = (u[0] - p["m"] * p["g"] * p["l"] * np.sin(theta)
               - p["b"] * omega) / (p["m"] * p["l"] ** 2)
        return np.array([omega, acc])

    return SystemSpec(
        "pendulum", xdot,
        x_eq=[np.pi, 0.0], u_eq=[0.0],
        domain=Box([0.0, -5.0], [2.0 * np.pi, 5.0]),
        control=Box([-10.0], [10.0]),
        params={"m": m, "b": b, "g": g, "l": l}, dt=dt,
    )


def make_path_following(dt=0.01, v=6.0, kappa=1.0):
    def xdot(x, u, p):
        d_e, theta_e = x
        denom = 1.0 - d_e * p["kappa"]
        return np.array([
            p["v"] * np.sin(theta_e),
            u[0] - p["v"] * p["kappa"] * np.cos(theta_e) / denom,
        ])

    return SystemSpec(
        "path_following", xdot,
        x_eq=[0.0, 0.0], u_eq=[v * kappa],
        domain=Box([-0.8, -0.8], [0.8, 0.8]),
        control=Box([-10.0], [10.0]),
        params={"v": v, "kappa": kappa}, dt=dt,
    )


def make_third_order(dt=0.01, e1=1.0, e2=1.0, e3=0.5, e4=1.0):
    def xdot(x, u, p):
        return np.array([
            p["e1"] * x[1],
            p["e2"] * x[2],
            p["e3"] * x[0] ** 2 + p["e4"] * u[0],
        ])

    return SystemSpec(
        "third_order", xdot,
        x_eq=[0.0, 0.0, 0.0], u_eq=[0.0],
        domain=Box([-1.5, -1.5, -2.0], [1.5, 1.5, 2.0]),
        control=Box([-30.0], [30.0]),
        params={"e1": e1, "e2": e2, "e3": e3, "e4": e4}, dt=dt,
    )


def make_cartpole(dt=0.01, M=1.0, m=0.1, l=0.5, g=9.81):
    def xdot(x, u, p):
        _, theta, xd, thetad = x
        M_, m_, l_, g_ = p["M"], p["m"], p["l"], p["g"]
        st, ct = np.sin(theta), np.cos(theta)
        mass = np.array([
            [M_ + m_, -m_ * l_ * ct],
            [-m_ * l_ * ct, m_ * l_ ** 2],
        ])
        rhs = np.array([
            u[0] - m_ * l_ * thetad ** 2 * st,
            m_ * g_ * l_ * st,
        ])
        acc = np.linalg.solve(mass, rhs)
        return np.array([xd, thetad, acc[0], acc[1]])

    return SystemSpec(
        "cartpole", xdot,
        x_eq=[0.0, 0.0, 0.0, 0.0], u_eq=[0.0],
        domain=Box([-1.0, -np.pi / 6, -1.0, -1.0], [1.0, np.pi / 6, 1.0, 1.0]),
        control=Box([-30.0], [30.0]),
        params={"M": M, "m": m, "l": l, "g": g}, dt=dt,
    )


SYSTEMS = {
    "pendulum": make_pendulum,
    "path_following": make_path_following,
    "third_order": make_third_order,
    "cartpole": make_cartpole,
}


def cartpole_energy(spec, x):
    """Total mechanical energy of the cart pole (zero control input)."""
    p = spec.params
    _, theta, xd, thetad = x
    kinetic = (0.5 * (p["M"] + p["m"]) * xd ** 2
               - p["m"] * p["l"] * xd * thetad * np.cos(theta)
               + 0.5 * p["m"] * p["l"] ** 2 * thetad ** 2)
    return kinetic + p["m"] * p["g"] * p["l"] * np.cos(theta)


class Trajectory:
    def __init__(self, states, controls, times, values=None, escaped=False):
        self.states = np.asarray(states, dtype=float)
        self.controls = np.asarray(controls, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.values = None if values is None else np.asarray(values, dtype=float)
        self.escaped = bool(escaped)

    def __len__(self):
        return self.states.shape[0]


def simulate_closed_loop(spec, policy, x0, steps, V=None, escape_factor=4.0):
    """Roll out the true dynamics under the policy.

    Truncates with escaped=True if the state leaves escape_factor * domain
    (scaled about the domain center). Lyapunov values are recorded when a
    candidate is supplied.
    """
    x0 = np.asarray(x0, dtype=float)
    escape = spec.domain.scaled(escape_factor)
    states = [x0.copy()]
    controls = []
    values = [eval_lyapunov(V, x0)] if V is not None else None
    escaped = False
    x = x0
    for _ in range(steps):
        u = policy.act(x)
        x = step_system(spec, x, u)
        controls.append(np.asarray(u, dtype=float))
        states.append(x.copy())
        if values is not None:
            values.append(eval_lyapunov(V, x))
        if not escape.contains(x):
            escaped = True
            break
    times = spec.dt * np.arange(len(states))
    return Trajectory(states, controls, times, values=values, escaped=escaped)
