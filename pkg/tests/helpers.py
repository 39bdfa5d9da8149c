"""Shared factories for randomized tests."""

import numpy as np

from lyapcert.lyapunov import (
    MonotonicLayer,
    MonotonicLyapunov,
    MonotonicUnit,
    project_unit,
)


def random_unit(rng, order=None, eps=0.01):
    """A random valid plus unit (first bias 0, slope prefix sums >= eps)."""
    p = order if order is not None else int(rng.integers(1, 5))
    b = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 1.0, size=p - 1))])
    a = rng.normal(size=p)
    a[0] = abs(a[0]) + eps
    return project_unit(MonotonicUnit(a, b, eps=eps, plus_class=True))


def axis_directions(n):
    """+e_1, -e_1, ..., +e_n, -e_n as rows."""
    eye = np.eye(n)
    return np.concatenate([np.stack([eye[d], -eye[d]]) for d in range(n)])


def random_lyapunov(rng, n_x=2, extra_dirs=1, lam=None, order=None):
    """Random valid candidate whose directions include every signed axis."""
    dirs = list(axis_directions(n_x))
    for _ in range(extra_dirs):
        v = rng.normal(size=n_x)
        dirs.append(v / np.linalg.norm(v))
    units = [
        (v, float(rng.uniform(0.1, 2.0)), random_unit(rng, order=order))
        for v in dirs
    ]
    layer = MonotonicLayer(units)
    x_eq = rng.normal(size=n_x)
    if lam is None:
        lam = float(rng.uniform(0.05, 0.5))
    R = None
    if lam > 0:
        while True:
            R = rng.normal(size=(n_x, n_x))
            if np.linalg.matrix_rank(R) == n_x:
                break
    return MonotonicLyapunov([layer], x_eq, R=R, lam=lam)


def abs_sum_lyapunov(n_x=2, coeff=1.0, lam=0.0, R=None, x_eq=None):
    """V(x) = coeff * ||x - x_eq||_1 built from one relu unit per signed axis."""
    units = [
        (v, coeff, MonotonicUnit([1.0], [0.0]))
        for v in axis_directions(n_x)
    ]
    if x_eq is None:
        x_eq = np.zeros(n_x)
    return MonotonicLyapunov([MonotonicLayer(units)], x_eq, R=R, lam=lam)
