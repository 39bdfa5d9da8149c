"""Simplex and branch-and-bound checks against enumeration oracles."""

import io
import itertools

import numpy as np
import pytest

from lyapcert.milp import MilpModel
from lyapcert.solver import (
    MilpOptions,
    brute_force_oracle,
    origin_in_convex_hull,
    solve_lp,
    solve_lp_relaxation,
    solve_milp,
)


def vertex_oracle(c, A, senses, b, lo, up, maximize=True):
    """Enumerate basic points (n-subsets of rows and bounds), keep the
    feasible ones, return the best objective. Assumes a bounded box."""
    n = c.size
    planes = []
    rhs = []
    for i in range(A.shape[0]):
        planes.append(A[i])
        rhs.append(b[i])
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        planes.append(e.copy())
        rhs.append(lo[j])
        planes.append(e)
        rhs.append(up[j])
    planes = np.array(planes)
    rhs = np.array(rhs)
    best = None
    for idx in itertools.combinations(range(len(planes)), n):
        M = planes[list(idx)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, rhs[list(idx)])
        if np.any(x < lo - 1e-8) or np.any(x > up + 1e-8):
            continue
        r = A @ x - b
        ok = all(
            (r[i] <= 1e-8) if s == "<" else (abs(r[i]) <= 1e-8)
            for i, s in enumerate(senses)
        )
        if not ok:
            continue
        v = float(c @ x)
        if best is None or (v > best if maximize else v < best):
            best = v
    return best


def random_lp(rng, max_vars=6, max_rows=10):
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows + 1))
    lo = rng.uniform(-3.0, 0.0, size=n)
    up = rng.uniform(0.5, 4.0, size=n)
    A = rng.normal(size=(m, n))
    # rhs chosen so an interior point stays feasible
    x0 = rng.uniform(lo, up)
    senses = "".join("<" if rng.random() < 0.85 else "=" for _ in range(m))
    b = A @ x0 + np.where([s == "<" for s in senses], np.abs(rng.normal(size=m)), 0.0)
    c = rng.normal(size=n)
    return c, A, senses, b, lo, up


def test_single_variable_cap():
    sol = solve_lp(np.array([1.0]), np.array([[1.0]]), "<", np.array([2.0]),
                   np.zeros(1), np.full(1, np.inf))
    assert sol.status == "optimal"
    assert abs(sol.objective - 2.0) < 1e-9
    assert abs(sol.x[0] - 2.0) < 1e-9


def test_shared_budget():
    sol = solve_lp(np.ones(2), np.ones((1, 2)), "<", np.array([1.0]),
                   np.zeros(2), np.full(2, np.inf))
    assert abs(sol.objective - 1.0) < 1e-9


def test_minimize_with_equality():
    # min 2x+3y on the segment x+y=1 inside the unit box sits at (1, 0)
    sol = solve_lp(np.array([2.0, 3.0]), np.ones((1, 2)), "=", np.array([1.0]),
                   np.zeros(2), np.ones(2), maximize=False)
    assert sol.status == "optimal"
    assert abs(sol.objective - 2.0) < 1e-9
    assert np.allclose(sol.x, [1.0, 0.0], atol=1e-9)


def test_infeasible_reported_as_status():
    sol = solve_lp(np.array([1.0]), np.array([[1.0], [-1.0]]), "<<",
                   np.array([1.0, -2.0]), np.zeros(1), np.full(1, np.inf))
    assert sol.status == "infeasible"


def test_unbounded_reported_as_status():
    sol = solve_lp(np.array([1.0]), np.zeros((0, 1)), "", np.zeros(0),
                   np.zeros(1), np.full(1, np.inf))
    assert sol.status == "unbounded"


def test_objective_constant_passes_through():
    sol = solve_lp(np.array([1.0]), np.array([[1.0]]), "<", np.array([2.0]),
                   np.zeros(1), np.full(1, np.inf), obj_const=5.0)
    assert abs(sol.objective - 7.0) < 1e-9


def test_random_lps_match_vertex_enumeration():
    rng = np.random.default_rng(42)
    for _ in range(60):
        c, A, senses, b, lo, up = random_lp(rng)
        sol = solve_lp(c, A, senses, b, lo, up)
        want = vertex_oracle(c, A, senses, b, lo, up)
        assert want is not None
        assert sol.status == "optimal"
        assert abs(sol.objective - want) < 1e-6, (sol.objective, want)


def test_lp_feasibility_and_complementarity_at_optimum():
    rng = np.random.default_rng(5)
    for _ in range(30):
        c, A, senses, b, lo, up = random_lp(rng, max_vars=5, max_rows=7)
        sol = solve_lp(c, A, senses, b, lo, up)
        assert sol.status == "optimal"
        r = A @ sol.x - b
        for i, s in enumerate(senses):
            if s == "<":
                assert r[i] <= 1e-7
                # complementary slackness: inactive rows carry no dual weight
                assert abs(sol.duals[i] * r[i]) < 1e-6
            else:
                assert abs(r[i]) <= 1e-7
        assert np.all(sol.x >= lo - 1e-7)
        assert np.all(sol.x <= up + 1e-7)


def test_lp_determinism():
    rng = np.random.default_rng(9)
    c, A, senses, b, lo, up = random_lp(rng)
    a1 = solve_lp(c, A, senses, b, lo, up)
    a2 = solve_lp(c, A, senses, b, lo, up)
    assert np.array_equal(a1.x, a2.x)
    assert a1.iterations == a2.iterations
    assert np.array_equal(a1.basis, a2.basis)


def random_milp(rng):
    nx = int(rng.integers(1, 4))
    nb = int(rng.integers(1, 8))
    m = MilpModel(maximize=bool(rng.integers(0, 2)))
    xs = [m.add_var(f"x{i}", float(rng.uniform(-3, 0)), float(rng.uniform(0.5, 4)))
          for i in range(nx)]
    bs = [m.add_binary(f"b{i}") for i in range(nb)]
    allv = xs + bs
    for _ in range(int(rng.integers(1, 6))):
        coeffs = {v: float(rng.normal()) for v in allv if rng.random() < 0.7}
        if not coeffs:
            continue
        sense = "<" if rng.random() < 0.8 else "="
        x0 = {
            v: (float(rng.integers(0, 2)) if m.is_binary[v]
                else float(rng.uniform(m.lo[v], m.up[v])))
            for v in allv
        }
        rhs = sum(cv * x0[v] for v, cv in coeffs.items())
        if sense == "<":
            rhs += abs(float(rng.normal()))
        m.add_constraint(coeffs, sense, rhs)
    m.set_objective({v: float(rng.normal()) for v in allv},
                    const=float(rng.normal()))
    return m


def test_milp_switch_example():
    """max x+y with x <= 1.5 b and y <= 1-b: b=1 gives 1.5, b=0 gives 1."""
    m = MilpModel(maximize=True)
    x = m.add_var("x", 0.0, np.inf)
    y = m.add_var("y", 0.0, np.inf)
    b = m.add_binary("b")
    m.add_constraint({x: 1.0, b: -1.5}, "<", 0.0)
    m.add_constraint({y: 1.0, b: 1.0}, "<", 1.0)
    m.set_objective({x: 1.0, y: 1.0})
    sol = solve_milp(m, MilpOptions())
    assert sol.status == "optimal"
    assert abs(sol.objective - 1.5) < 1e-9
    assert abs(sol.x[b] - 1.0) < 1e-6


def test_milp_with_fixed_binaries_equals_lp():
    m = MilpModel(maximize=True)
    x = m.add_var("x", 0.0, 3.0)
    b = m.add_binary("b")
    m.fix_var(b, 1.0)
    m.add_constraint({x: 1.0, b: 1.0}, "<", 2.5)
    m.set_objective({x: 1.0, b: 0.5})
    sol = solve_milp(m, MilpOptions())
    lp = solve_lp_relaxation(m)
    assert sol.status == lp.status == "optimal"
    assert abs(sol.objective - lp.objective) < 1e-9
    assert sol.node_count == 1


def test_milp_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(80):
        m = random_milp(rng)
        got = solve_milp(m, MilpOptions())
        want = brute_force_oracle(m)
        assert got.status == want.status
        if got.status == "optimal":
            assert abs(got.objective - want.objective) < 1e-6
            # returned point must be feasible and integral
            _, c, oc, A, senses, b, lo, up, isb = m.to_dense()
            assert abs(float(c @ got.x) + oc - got.objective) < 1e-7
            r = A @ got.x - b
            for i, s in enumerate(senses):
                assert r[i] <= 1e-6 if s == "<" else abs(r[i]) <= 1e-6
            assert np.all(np.abs(got.x[isb] - np.round(got.x[isb])) <= 1e-6)


def test_milp_infeasible():
    m = MilpModel()
    x = m.add_var("x", 0.0, 1.0)
    b = m.add_binary("b")
    m.add_constraint({x: 1.0, b: 1.0}, ">", 3.0)
    m.set_objective({x: 1.0})
    assert solve_milp(m, MilpOptions()).status == "infeasible"
    assert brute_force_oracle(m).status == "infeasible"


def test_brute_force_zero_binaries_is_plain_lp():
    m = MilpModel(maximize=True)
    x = m.add_var("x", 0.0, 2.0)
    m.set_objective({x: 1.0})
    want = solve_lp_relaxation(m)
    got = brute_force_oracle(m)
    assert abs(got.objective - want.objective) < 1e-12


def test_brute_force_one_branch_infeasible():
    # beta=1 forces x >= 3 inside x <= 1, so only beta=0 survives
    m = MilpModel(maximize=True)
    x = m.add_var("x", 0.0, 1.0)
    b = m.add_binary("b")
    m.add_constraint({x: -1.0, b: 3.0}, "<", 0.0)
    m.set_objective({x: 1.0, b: 5.0})
    sol = brute_force_oracle(m)
    assert sol.status == "optimal"
    assert abs(sol.x[b]) < 1e-9
    assert abs(sol.objective - 1.0) < 1e-9
    milp_sol = solve_milp(m, MilpOptions())
    assert abs(milp_sol.objective - sol.objective) < 1e-9


def test_milp_determinism_across_runs():
    rng = np.random.default_rng(3)
    m = random_milp(rng)
    a = solve_milp(m, MilpOptions())
    b = solve_milp(m, MilpOptions())
    assert a.status == b.status
    if a.status == "optimal":
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.active_rows, b.active_rows)
    assert a.node_count == b.node_count
    assert a.iterations == b.iterations


def test_milp_beats_random_roundings():
    rng = np.random.default_rng(11)
    m = MilpModel(maximize=True)
    xs = [m.add_var(f"x{i}", -2.0, 2.0) for i in range(3)]
    bs = [m.add_binary(f"b{i}") for i in range(6)]
    for _ in range(6):
        m.add_constraint({v: float(rng.normal()) for v in xs + bs}, "<",
                         float(rng.uniform(0.5, 2.0)))
    m.set_objective({v: float(rng.normal()) for v in xs + bs})
    sol = solve_milp(m, MilpOptions())
    assert sol.status == "optimal"
    _, c, oc, A, senses, b, lo, up, isb = m.to_dense()
    for _ in range(1000):
        lo2, up2 = lo.copy(), up.copy()
        for v in bs:
            lo2[v] = up2[v] = float(rng.integers(0, 2))
        cand = solve_lp(c, A, senses, b, lo2, up2, maximize=True, obj_const=oc)
        if cand.status == "optimal":
            assert cand.objective <= sol.objective + 1e-7


def test_active_rows_have_small_residual():
    rng = np.random.default_rng(21)
    for _ in range(20):
        m = random_milp(rng)
        sol = solve_milp(m, MilpOptions())
        if sol.status != "optimal":
            continue
        _, _, _, A, senses, b, *_ = m.to_dense()
        r = np.abs(A @ sol.x - b)
        assert np.all(r[sol.active_rows] <= 1e-6)


def test_node_limit_status_is_distinct():
    rng = np.random.default_rng(2)
    m = MilpModel(maximize=True)
    bs = [m.add_binary(f"b{i}") for i in range(12)]
    w = rng.uniform(1.0, 3.0, size=12)
    m.add_constraint({v: w[i] for i, v in enumerate(bs)}, "<", float(w.sum() / 2))
    m.set_objective({v: w[i] + 0.01 * rng.normal() for i, v in enumerate(bs)})
    sol = solve_milp(m, MilpOptions(node_limit=3))
    assert sol.status == "node_limit"


def test_solve_log_records_nodes():
    m = MilpModel(maximize=True)
    x = m.add_var("x", 0.0, np.inf)
    y = m.add_var("y", 0.0, np.inf)
    b = m.add_binary("b")
    m.add_constraint({x: 1.0, b: -1.5}, "<", 0.0)
    m.add_constraint({y: 1.0, b: 1.0}, "<", 1.0)
    m.set_objective({x: 1.0, y: 1.0})
    log = io.StringIO()
    solve_milp(m, MilpOptions(log=log))
    text = log.getvalue()
    assert "bound" in text and "objective" in text and "nodes=" in text


def test_completion_callback_supplies_incumbents():
    calls = []

    def completion(x):
        calls.append(x.copy())
        out = x.copy()
        out[-1] = np.round(out[-1])
        return out

    m = MilpModel(maximize=True)
    x = m.add_var("x", 0.0, np.inf)
    y = m.add_var("y", 0.0, np.inf)
    b = m.add_binary("b")
    m.add_constraint({x: 1.0, b: -1.5}, "<", 0.0)
    m.add_constraint({y: 1.0, b: 1.0}, "<", 1.0)
    m.set_objective({x: 1.0, y: 1.0})
    sol = solve_milp(m, MilpOptions(completion=completion))
    assert sol.status == "optimal"
    assert abs(sol.objective - 1.5) < 1e-9
    assert calls


def test_origin_in_convex_hull_basic():
    assert origin_in_convex_hull(np.array([[1.0, 0.0], [-1.0, 0.0],
                                           [0.0, 1.0], [0.0, -1.0]]))
    assert not origin_in_convex_hull(np.array([[1.0, 0.0], [0.0, 1.0],
                                               [1.0, 1.0]]))
    assert origin_in_convex_hull(np.array([[0.0, 0.0]]))
    assert origin_in_convex_hull(np.array([[-1.0], [2.0]]))
    assert not origin_in_convex_hull(np.array([[1.0], [2.0]]))
