"""Piecewise-linear (leaky-ReLU) networks and the dynamics/policy wrappers built on them.

All evaluation here is pure and deterministic: weights are copied on
construction, accumulation order inside a layer is fixed by numpy's
row-major matvec, and nothing is mutated after __init__.
"""

import numpy as np


class DimensionError(ValueError):
    """Raised when an input does not match a network's expected dimension."""


def leaky_relu(y, leak):
    """Elementwise max(y, leak*y) for 0 <= leak < 1."""
    return np.maximum(y, leak * y)


class Box:
    """Axis-aligned box {x : lower <= x <= upper} (componentwise)."""

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float)).copy()
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise DimensionError("box bounds must be 1-D vectors of equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("box has lower > upper in some dimension")

    @property
    def dim(self):
        return self.lower.size

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self):
        return 0.5 * (self.upper - self.lower)

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def contains_box(self, other, tol=0.0):
        return bool(
            np.all(other.lower >= self.lower - tol)
            and np.all(other.upper <= self.upper + tol)
        )

    def sample(self, rng, n=1):
        """Uniform samples, shape (n, dim)."""
        u = rng.random((n, self.dim))
        return self.lower + u * (self.upper - self.lower)

    def scaled(self, factor, center=None):
        """Box scaled by `factor` about `center` (default: its own center)."""
        c = self.center if center is None else np.asarray(center, dtype=float)
        return Box(c - factor * (c - self.lower), c + factor * (self.upper - c))

    def is_finite(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


class PwlNetwork:
    """Fully connected leaky-ReLU network.

    `layers` is an ordered list of (W, b) pairs. Activations sit between
    consecutive affine maps; the last affine output is returned raw, so a
    single-layer network is plain affine.
    """

    def __init__(self, layers, leak=0.0):
        if not layers:
            raise ValueError("network needs at least one affine layer")
        if not 0.0 <= leak < 1.0:
            raise ValueError(f"leak must be in [0, 1), got {leak}")
        self.layers = []
        prev = None
        for W, b in layers:
            W = np.asarray(W, dtype=float).copy()
            b = np.asarray(b, dtype=float).copy()
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.size:
                raise DimensionError("layer needs W (m,n) and b (m,)")
            if prev is not None and W.shape[1] != prev:
                raise DimensionError(
                    f"layer input dim {W.shape[1]} does not match previous output {prev}"
                )
            prev = W.shape[0]
            self.layers.append((W, b))
        self.leak = float(leak)

    @property
    def input_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self):
        return self.layers[-1][0].shape[0]

    @property
    def n_hidden_neurons(self):
        return sum(W.shape[0] for W, _ in self.layers[:-1])

    def __call__(self, x):
        return eval_pwl_network(self, x)

    def forward_trace(self, x):
        """Evaluate at a single point, returning (output, preactivations).

        `preactivations[i]` is the pre-activation vector of hidden layer i.
        Used by the MILP completion path and fixed-pattern gradients.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimensionError(f"expected input of dim {self.input_dim}, got {x.shape}")
        z = x
        pre = []
        for i, (W, b) in enumerate(self.layers):
            zhat = W @ z + b
            if i < len(self.layers) - 1:
                pre.append(zhat)
                z = leaky_relu(zhat, self.leak)
            else:
                return zhat, pre
        raise AssertionError("unreachable")

    def with_params(self, layers):
        """New network with the same leak and replaced (W, b) pairs."""
        return PwlNetwork(layers, leak=self.leak)


def eval_pwl_network(net, x):
    """Layer-by-layer evaluation of a PwlNetwork.

    Accepts a single vector or a batch of shape (n, input_dim).
    """
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    if (batched and x.shape[1] != net.input_dim) or (
        not batched and x.shape != (net.input_dim,)
    ):
        raise DimensionError(f"expected input of dim {net.input_dim}, got {x.shape}")
    z = x
    last = len(net.layers) - 1
    for i, (W, b) in enumerate(net.layers):
        zhat = z @ W.T + b if batched else W @ z + b
        z = zhat if i == last else leaky_relu(zhat, net.leak)
    return z


class DynamicsModel:
    """Discrete-time dynamics with the equilibrium pinned exactly.

    residual=False:  x+ = phi(x,u) - phi(x_eq,u_eq) + x_eq
    residual=True:   x+ = x + phi(x,u) - phi(x_eq,u_eq)

    Either way, stepping at (x_eq, u_eq) reproduces x_eq bit for bit. The
    residual form keeps the network output small (one integration step),
    which gives the verifier a tight a-priori bound on x+ - x.
    """

    def __init__(self, net, x_eq, u_eq, residual=False):
        self.net = net
        self.x_eq = np.atleast_1d(np.asarray(x_eq, dtype=float)).copy()
        self.u_eq = np.atleast_1d(np.asarray(u_eq, dtype=float)).copy()
        self.residual = bool(residual)
        if self.x_eq.size + self.u_eq.size != net.input_dim:
            raise DimensionError("dynamics net input must be dim(x) + dim(u)")
        if net.output_dim != self.x_eq.size:
            raise DimensionError("dynamics net output must be dim(x)")
        self.phi_eq = eval_pwl_network(net, np.concatenate([self.x_eq, self.u_eq]))

    @property
    def n_x(self):
        return self.x_eq.size

    @property
    def n_u(self):
        return self.u_eq.size

    def step(self, x, u):
        return eval_dynamics(self, x, u)


def eval_dynamics(d, x, u):
    """One dynamics step. Accepts vectors or equal-length batches."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.ndim == 2 or u.ndim == 2:
        if x.shape[-1] != d.n_x or u.shape[-1] != d.n_u:
            raise DimensionError("state/control dims do not match the model")
        xu = np.concatenate([np.atleast_2d(x), np.atleast_2d(u)], axis=1)
    else:
        if x.shape != (d.n_x,) or u.shape != (d.n_u,):
            raise DimensionError("state/control dims do not match the model")
        xu = np.concatenate([x, u])
    base = x if d.residual else d.x_eq
    return eval_pwl_network(d.net, xu) - d.phi_eq + base


class PolicyModel:
    """Control policy pi(x) = clamp(phi(x) - phi(x_eq) + u_eq, u_min, u_max)."""

    def __init__(self, net, x_eq, u_eq, u_min, u_max):
        self.net = net
        self.x_eq = np.atleast_1d(np.asarray(x_eq, dtype=float)).copy()
        self.u_eq = np.atleast_1d(np.asarray(u_eq, dtype=float)).copy()
        self.u_min = np.atleast_1d(np.asarray(u_min, dtype=float)).copy()
        self.u_max = np.atleast_1d(np.asarray(u_max, dtype=float)).copy()
        if net.input_dim != self.x_eq.size:
            raise DimensionError("policy net input must be dim(x)")
        if net.output_dim != self.u_eq.size:
            raise DimensionError("policy net output must be dim(u)")
        if self.u_min.size != self.u_eq.size or self.u_max.size != self.u_eq.size:
            raise DimensionError("control limits must be dim(u)")
        if np.any(self.u_min > self.u_max):
            raise ValueError("u_min exceeds u_max in some component")
        self.phi_eq = eval_pwl_network(net, self.x_eq)

    @property
    def n_x(self):
        return self.x_eq.size

    @property
    def n_u(self):
        return self.u_eq.size

    def act(self, x):
        return eval_policy(self, x)

    def preclamp(self, x):
        """Policy output before clamping."""
        return eval_pwl_network(self.net, x) - self.phi_eq + self.u_eq


def eval_policy(p, x):
    """Clamped policy evaluation. Accepts a vector or a batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.n_x:
        raise DimensionError(f"expected state of dim {p.n_x}, got {x.shape}")
    raw = eval_pwl_network(p.net, x) - p.phi_eq + p.u_eq
    return np.clip(raw, p.u_min, p.u_max)
