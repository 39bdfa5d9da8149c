"""Figures and tables: level-set contours, history CSVs, trajectories.

The contour tracer is a small marching-squares pass over a value grid
with a bisection refinement along each crossing edge, so every emitted
contour point satisfies |V(x) - level| <= rel_tol * level instead of
inheriting the grid resolution.
"""

import csv

import numpy as np

from .lyapunov import eval_lyapunov
from .pwl import Box

TRAIN_FIELDS = ["iteration", "gamma_star", "region_index", "certified",
                "milp_solves", "step_size"]
ROA_FIELDS = ["iteration", "l_star", "half_width", "gamma_star", "accepted",
              "step_size"]

# edge index -> the two corner indices it joins; corners run
# counterclockwise from the lower-left one
_EDGE_CORNERS = ((0, 1), (1, 2), (2, 3), (3, 0))
_CASES = {
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(0, 2)],
    11: [(1, 2)],
    12: [(3, 1)],
    13: [(0, 1)],
    14: [(0, 3)],
}


def _refine_crossing(f, level, p_in, v_in, p_out, v_out, tol):
    """Bisect along the edge between an inside and an outside point."""
    p_in = np.asarray(p_in, dtype=float)
    p_out = np.asarray(p_out, dtype=float)
    for _ in range(60):
        mid = 0.5 * (p_in + p_out)
        v_mid = f(mid)
        if abs(v_mid - level) <= tol:
            return mid
        if v_mid <= level:
            p_in, v_in = mid, v_mid
        else:
            p_out, v_out = mid, v_mid
    return 0.5 * (p_in + p_out)


def _grid_values(f, xs, ys):
    """f over the grid, batched when f supports (k, 2) input."""
    n = xs.size
    XX, YY = np.meshgrid(xs, ys)
    pts = np.column_stack([XX.ravel(), YY.ravel()])
    try:
        vals = np.asarray(f(pts), dtype=float)
        if vals.shape == (pts.shape[0],):
            return vals.reshape(n, n)
    except Exception:
        pass
    F = np.empty((n, n))
    for j in range(n):
        for i in range(n):
            F[j, i] = float(f(np.array([xs[i], ys[j]])))
    return F


def level_contour(f, level, box, n=201, rel_tol=1e-3):
    """Marching squares for {f = level} over a box.

    Returns an array of line segments, shape (k, 2, 2). `f` maps a
    2-vector to a scalar; `box` bounds the traced window.
    """
    if box.dim != 2:
        raise ValueError("contours are traced on 2-D boxes")
    xs = np.linspace(box.lower[0], box.upper[0], n)
    ys = np.linspace(box.lower[1], box.upper[1], n)
    F = _grid_values(f, xs, ys)
    tol = rel_tol * max(abs(level), 1e-12)
    inside = F <= level
    segments = []
    for j in range(n - 1):
        for i in range(n - 1):
            corner_idx = ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1))
            bits = 0
            for k, (ci, cj) in enumerate(corner_idx):
                if inside[cj, ci]:
                    bits |= 1 << k
            if bits in (0, 15):
                continue
            if bits in (5, 10):
                center = np.array([0.5 * (xs[i] + xs[i + 1]),
                                   0.5 * (ys[j] + ys[j + 1])])
                center_in = f(center) <= level
                if bits == 5:
                    pairs = [(0, 1), (2, 3)] if center_in else [(3, 0), (1, 2)]
                else:
                    pairs = [(3, 0), (1, 2)] if center_in else [(0, 1), (2, 3)]
            else:
                pairs = _CASES[bits]
            crossings = {}
            for pair in pairs:
                for e in pair:
                    if e in crossings:
                        continue
                    a, b = _EDGE_CORNERS[e]
                    (ai, aj), (bi, bj) = corner_idx[a], corner_idx[b]
                    pa = np.array([xs[ai], ys[aj]])
                    pb = np.array([xs[bi], ys[bj]])
                    va, vb = F[aj, ai], F[bj, bi]
                    if va <= level:
                        crossings[e] = _refine_crossing(f, level, pa, va,
                                                        pb, vb, tol)
                    else:
                        crossings[e] = _refine_crossing(f, level, pb, vb,
                                                        pa, va, tol)
            for e1, e2 in pairs:
                segments.append((crossings[e1], crossings[e2]))
    return np.array(segments) if segments else np.empty((0, 2, 2))


def _axis_pairs(n_x):
    return [(i, j) for i in range(n_x) for j in range(i + 1, n_x)]


def _slice_eval(V, pin, axes):
    """V restricted to a 2-D axis-aligned slice through the pinned point."""

    def f(p2):
        p2 = np.asarray(p2, dtype=float)
        if p2.ndim == 1:
            x = pin.copy()
            x[axes[0]] = p2[0]
            x[axes[1]] = p2[1]
            return eval_lyapunov(V, x)
        X = np.tile(pin, (p2.shape[0], 1))
        X[:, axes[0]] = p2[:, 0]
        X[:, axes[1]] = p2[:, 1]
        return eval_lyapunov(V, X)

    return f


def render_levels(V, levels, domain, out_path, half_width=None, grid=201,
                  labels=None):
    """SVG of level contours, the domain box, and the inscribed square.

    2-D states get one panel; 3- and 4-D states get one panel per axis
    pair, the remaining coordinates pinned at the equilibrium.
    """
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    from matplotlib.collections import LineCollection
    from matplotlib.patches import Rectangle

    n_x = V.n_x
    pairs = [(0, 1)] if n_x == 2 else _axis_pairs(n_x)
    if n_x > 4:
        raise ValueError("level plots cover 2- to 4-D states")
    cols = min(len(pairs), 3)
    rows = (len(pairs) + cols - 1) // cols
    fig, axs = plt.subplots(rows, cols, figsize=(4.2 * cols, 4.0 * rows),
                            squeeze=False)
    colors = ["tab:red", "tab:blue", "tab:green", "tab:purple"]
    labels = labels or [f"V = {lv:g}" for lv in levels]
    window = domain.scaled(1.05)
    for k, (i, j) in enumerate(pairs):
        ax = axs[k // cols][k % cols]
        win2 = Box([window.lower[i], window.lower[j]],
                   [window.upper[i], window.upper[j]])
        f = _slice_eval(V, V.x_eq.copy(), (i, j))
        for li, lv in enumerate(levels):
            segs = level_contour(f, lv, win2, n=grid)
            if len(segs):
                ax.add_collection(LineCollection(
                    segs, colors=colors[li % len(colors)],
                    label=labels[li], linewidths=1.4))
        ax.add_patch(Rectangle(
            (domain.lower[i], domain.lower[j]),
            domain.upper[i] - domain.lower[i],
            domain.upper[j] - domain.lower[j],
            fill=False, edgecolor="black", linewidth=1.2,
            label="domain" if k == 0 else None))
        if half_width is not None:
            ax.add_patch(Rectangle(
                (V.x_eq[i] - half_width, V.x_eq[j] - half_width),
                2 * half_width, 2 * half_width, fill=False,
                edgecolor="tab:orange", linestyle="--", linewidth=1.2,
                label="inscribed square" if k == 0 else None))
        ax.plot([V.x_eq[i]], [V.x_eq[j]], marker="+", color="black",
                markersize=8)
        ax.set_xlim(win2.lower[0], win2.upper[0])
        ax.set_ylim(win2.lower[1], win2.upper[1])
        ax.set_xlabel(f"x{i + 1}")
        ax.set_ylabel(f"x{j + 1}")
        ax.set_aspect("auto")
    for k in range(len(pairs), rows * cols):
        axs[k // cols][k % cols].axis("off")
    handles, names = axs[0][0].get_legend_handles_labels()
    if handles:
        # LineCollections repeat per panel; keep the first of each name
        seen = {}
        for h, nm in zip(handles, names):
            seen.setdefault(nm, h)
        fig.legend(seen.values(), seen.keys(), loc="lower center",
                   ncol=min(4, len(seen)), frameon=False)
    fig.tight_layout(rect=(0, 0.06, 1, 1))
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def write_csv(path, rows, fields):
    """History rows to CSV; extra keys in rows are dropped, missing left
    empty. Floats go through repr so rewriting is byte-stable."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})


def write_trajectories_csv(path, trajectories):
    """All rollouts in one long table, tagged by rollout index."""
    if not trajectories:
        raise ValueError("no trajectories to write")
    n_x = trajectories[0].states.shape[1]
    n_u = trajectories[0].controls.shape[1] if len(
        trajectories[0].controls) else 0
    fields = (["rollout", "t"] + [f"x{d + 1}" for d in range(n_x)]
              + [f"u{d + 1}" for d in range(n_u)])
    has_v = trajectories[0].values is not None
    if has_v:
        fields.append("V")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for ri, traj in enumerate(trajectories):
            for k in range(len(traj.states)):
                row = [ri, repr(float(traj.times[k]))]
                row += [repr(float(v)) for v in traj.states[k]]
                if k < len(traj.controls):
                    row += [repr(float(v)) for v in traj.controls[k]]
                else:
                    row += [""] * n_u
                if has_v:
                    row.append(repr(float(traj.values[k])))
                writer.writerow(row)
