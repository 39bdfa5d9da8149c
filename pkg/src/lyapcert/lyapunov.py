"""Monotonic Lyapunov candidates.

A candidate is built from scalar monotonic units m(y) = a^T relu(y*1 - b)
whose biases are stored in strictly ascending order and whose slope prefix
sums are kept at or above a floor eps, so every linear segment of m has
slope >= eps and m is strictly increasing. Units with b[0] = 0 vanish on
(-inf, 0] ("plus" units). A layer combines units along direction vectors,
and the full candidate is

    V(x) = phi_v(x - x_eq) + lam * ||R (x - x_eq)||_1

with phi_v a composition of monotonic layers (a single layer in every
configuration we train). All sublevel sets of V are star convex about x_eq.
"""

import warnings

import numpy as np

from .pwl import Box, DimensionError

SLOPE_EPS = 0.01
C_MIN = 1e-3
BIAS_GAP_MIN = 1e-3


class MonotonicUnit:
    """Scalar piecewise-linear monotonic unit m(y) = a^T relu(y - b)."""

    def __init__(self, a, b, eps=SLOPE_EPS, plus_class=None):
        self.a = np.atleast_1d(np.asarray(a, dtype=float)).copy()
        self.b = np.atleast_1d(np.asarray(b, dtype=float)).copy()
        if self.a.shape != self.b.shape or self.a.ndim != 1 or self.a.size == 0:
            raise DimensionError("slopes and biases must be 1-D vectors of equal length")
        self.eps = float(eps)
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        # Intent flag: a plus unit keeps its first bias pinned at 0 so that
        # m(y) = 0 for y <= 0. Inferred from the stored bias when not given.
        self.plus_class = bool(self.b[0] == 0.0) if plus_class is None else bool(plus_class)

    @property
    def order(self):
        return self.a.size

    def segment_slopes(self):
        """Slope of m on each segment [b_i, b_{i+1}) (prefix sums of a)."""
        return np.cumsum(self.a)

    def is_valid(self):
        gaps_ok = np.all(np.diff(self.b) >= BIAS_GAP_MIN - 1e-12) if self.order > 1 else True
        plus_ok = (self.b[0] == 0.0) if self.plus_class else True
        return bool(
            self.a[0] > 0
            and np.all(self.segment_slopes() >= self.eps - 1e-12)
            and gaps_ok
            and plus_ok
        )

    def validate(self):
        if not self.is_valid():
            raise ValueError(
                "monotonic unit violates slope/bias conditions: "
                f"a={self.a.tolist()}, b={self.b.tolist()}, eps={self.eps}"
            )

    def __call__(self, y):
        return eval_monotonic_unit(self, y)


def eval_monotonic_unit(u, y):
    """m(y) = sum_i a_i relu(y - b_i). Accepts scalar or array y."""
    y = np.asarray(y, dtype=float)
    vals = np.maximum(y[..., None] - u.b, 0.0) @ u.a
    return float(vals) if y.ndim == 0 else vals


def project_unit(u, eps=None, bias_gap_min=BIAS_GAP_MIN):
    """Componentwise projection of a raw unit onto the valid set.

    Biases are sorted and pushed apart to keep gaps >= bias_gap_min (the
    first bias pinned to 0 for plus units); slope prefix sums are raised
    to >= eps by adjusting the offending slope. Idempotent on valid units.
    """
    eps = u.eps if eps is None else float(eps)
    b = np.sort(u.b)
    if u.plus_class:
        b[0] = 0.0
    for i in range(1, b.size):
        if b[i] < b[i - 1] + bias_gap_min:
            b[i] = b[i - 1] + bias_gap_min
    a = u.a.copy()
    prefix = 0.0
    for i in range(a.size):
        prefix += a[i]
        if prefix < eps:
            a[i] += eps - prefix
            prefix = eps
    return MonotonicUnit(a, b, eps=eps, plus_class=u.plus_class)


def invert_scaled_unit(u, scale, r):
    """Solve scale * m(t) = r for t >= 0 by walking the segments of m.

    The slope floor makes the scaled map strictly increasing, so the
    solution is unique. Exact (no iteration).
    """
    if r <= 0:
        raise ValueError(f"level must be positive, got {r}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    target = r / scale
    m0 = eval_monotonic_unit(u, 0.0)
    if m0 >= target:
        raise ValueError("unit already exceeds the level at 0; cannot invert on t >= 0")
    slopes = u.segment_slopes()
    t_prev, m_prev = 0.0, m0
    for i in range(u.order):
        if u.b[i] <= t_prev:
            continue
        m_kink = eval_monotonic_unit(u, u.b[i])
        if m_kink >= target:
            # Crossing happens on [t_prev, b_i]; slope there is that of the
            # segment ending at b_i.
            slope = slopes[i - 1] if i > 0 else (m_kink - m_prev) / (u.b[i] - t_prev)
            return t_prev + (target - m_prev) / slope
        t_prev, m_prev = u.b[i], m_kink
    return t_prev + (target - m_prev) / slopes[-1]


class MonotonicLayer:
    """One monotonic layer. Each output coordinate has its own disjoint
    group of (direction, coefficient, unit) triples:

        out_j(x) = sum_i c_i * m_i(v_i^T x)  over group j.

    Construct from a flat list of triples for the common scalar-output case.
    """

    def __init__(self, groups):
        if groups and isinstance(groups[0], tuple):
            groups = [groups]
        if not groups or any(not g for g in groups):
            raise ValueError("layer needs at least one unit per output")
        self.groups = []
        d_in = None
        for group in groups:
            parsed = []
            for v, c, unit in group:
                v = np.atleast_1d(np.asarray(v, dtype=float)).copy()
                if d_in is None:
                    d_in = v.size
                elif v.size != d_in:
                    raise DimensionError("all directions must share the input dimension")
                parsed.append((v, float(c), unit))
            self.groups.append(parsed)

    @property
    def input_dim(self):
        return self.groups[0][0][0].size

    @property
    def output_dim(self):
        return len(self.groups)

    @property
    def n_units(self):
        return sum(len(g) for g in self.groups)

    def units_flat(self):
        for j, group in enumerate(self.groups):
            for v, c, unit in group:
                yield j, v, c, unit

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out_shape = x.shape[:-1] + (self.output_dim,)
        out = np.zeros(out_shape)
        for j, group in enumerate(self.groups):
            acc = 0.0
            for v, c, unit in group:
                acc = acc + c * eval_monotonic_unit(unit, x @ v)
            out[..., j] = acc
        return out

    def is_valid(self):
        if self.n_units < self.input_dim + 1:
            warnings.warn(
                f"monotonic layer has {self.n_units} units for input dim "
                f"{self.input_dim}; expected at least n_x + 1",
                stacklevel=2,
            )
        for _, v, c, unit in self.units_flat():
            if c <= 0 or not np.any(v != 0.0) or not unit.is_valid():
                return False
        return True


class MonotonicLyapunov:
    """Lyapunov candidate V(x) = phi_v(x - x_eq) + lam * ||R (x - x_eq)||_1."""

    def __init__(self, layers, x_eq, R=None, lam=0.0):
        if not layers:
            raise ValueError("need at least one monotonic layer")
        self.layers = list(layers)
        self.x_eq = np.atleast_1d(np.asarray(x_eq, dtype=float)).copy()
        if self.layers[0].input_dim != self.x_eq.size:
            raise DimensionError("first layer input must be dim(x)")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.input_dim != prev.output_dim:
                raise DimensionError("layer dims do not chain")
        if self.layers[-1].output_dim != 1:
            raise DimensionError("last layer must have scalar output")
        self.lam = float(lam)
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if R is None:
            self.R = None
            if self.lam > 0:
                raise ValueError("lambda > 0 requires an R matrix")
        else:
            self.R = np.asarray(R, dtype=float).copy()
            if self.R.shape != (self.x_eq.size, self.x_eq.size):
                raise DimensionError("R must be square n_x by n_x")

    @property
    def n_x(self):
        return self.x_eq.size

    @property
    def first_layer(self):
        return self.layers[0]

    def phi(self, delta):
        """Layer composition applied to x - x_eq."""
        z = np.asarray(delta, dtype=float)
        for layer in self.layers:
            z = layer(z)
        return z[..., 0]

    def __call__(self, x):
        return eval_lyapunov(self, x)

    def validate(self, check_hull=True):
        """Raise if any structural invariant fails.

        Positivity needs either lam > 0 with full-rank R, or the origin in
        the convex hull of the first-layer directions (with strictly
        increasing units the layer then grows along every ray).
        """
        for layer in self.layers:
            if not layer.is_valid():
                raise ValueError("invalid monotonic layer parameters")
            for _, _, _, unit in layer.units_flat():
                if not unit.plus_class:
                    raise ValueError("all units must be plus units (first bias 0)")
        full_rank = self.R is not None and (
            np.linalg.matrix_rank(self.R) == self.n_x
        )
        if self.lam > 0 and full_rank:
            return
        if not check_hull:
            return
        from .solver import origin_in_convex_hull

        dirs = np.array([v for _, v, _, _ in self.first_layer.units_flat()])
        if not origin_in_convex_hull(dirs):
            raise ValueError(
                "positivity not guaranteed: need lam > 0 with full-rank R, or "
                "the origin inside the convex hull of first-layer directions"
            )


def eval_lyapunov(V, x):
    """V(x). Accepts a vector or a batch of shape (n, n_x)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != V.n_x:
        raise DimensionError(f"expected state of dim {V.n_x}, got {x.shape}")
    delta = x - V.x_eq
    val = V.phi(delta)
    if V.lam > 0:
        val = val + V.lam * np.sum(np.abs(delta @ V.R.T), axis=-1)
    return val


def project_parameters(V):
    """Project every unit and coefficient of V onto the valid set.

    Clamping only: slopes get prefix sums >= eps, coefficients c_i >= C_MIN,
    bias gaps >= BIAS_GAP_MIN with plus-unit first bias pinned at 0.
    Directions, R, lam, x_eq are left untouched.
    """
    new_layers = []
    for layer in V.layers:
        new_groups = []
        for group in layer.groups:
            new_groups.append(
                [(v, max(c, C_MIN), project_unit(unit)) for v, c, unit in group]
            )
        new_layers.append(MonotonicLayer(new_groups))
    return MonotonicLyapunov(new_layers, V.x_eq, R=V.R, lam=V.lam)


def level_bounding_box(V, r):
    """Axis-aligned box guaranteed to contain the sublevel set {V <= r}.

    Requires a single monotonic layer whose directions include every
    positive and negative axis. Each axis-aligned unit contributes a
    bounding plane at the inverse of t -> c * m(||v|| t) evaluated at r;
    the box takes the largest extent per dimension, symmetric about x_eq.
    Sound because every term of V is nonnegative.
    """
    if len(V.layers) != 1:
        raise ValueError("level box needs a single-layer candidate")
    if r <= 0:
        raise ValueError(f"level must be positive, got {r}")
    n = V.n_x
    extents = [[] for _ in range(n)]
    covered = np.zeros((n, 2), dtype=bool)
    for _, v, c, unit in V.first_layer.units_flat():
        nonzero = np.nonzero(v)[0]
        if nonzero.size != 1:
            continue
        d = int(nonzero[0])
        scale = abs(v[d])
        # invert c * m(scale * t) = r  <=>  m(s) = r / c at s = scale * t
        s = invert_scaled_unit(unit, c, r)
        extents[d].append(s / scale)
        covered[d, 0 if v[d] > 0 else 1] = True
    if not covered.all():
        raise ValueError("first layer is missing an axis direction; cannot bound the level set")
    half = np.array([max(e) for e in extents])
    return Box(V.x_eq - half, V.x_eq + half)
