"""MILP model construction for piecewise-linear networks.

A MilpModel is a plain container of bounded continuous variables, binary
variables, and sparse linear rows, with a provenance tag per coefficient
saying where the number came from: a raw network parameter ("param"), a
product of parameters and constants ("mixed"), a plain constant
("const"), or a bound-derived big-M value ("bigM", never differentiated).

The encoders turn leaky-ReLU networks, clamps, weighted l1 terms and an
linf distance into exact mixed-integer constraints. A neuron whose
pre-activation interval does not cross zero is linearized with no binary.
Every encoder returns a small record that can replay the encoded
computation on a concrete input, which is what the completion heuristic
in the verifier uses to turn a region point into a full feasible MILP
assignment.
"""

from dataclasses import dataclass, field

import numpy as np

from .pwl import Box, DimensionError, leaky_relu as _leaky


class MilpModel:
    def __init__(self, maximize=True):
        self.maximize = bool(maximize)
        self.var_names = []
        self.lo = []
        self.up = []
        self.is_binary = []
        self.rows = []  # (coeffs dict, sense '<' or '=', rhs, name)
        self.obj = {}
        self.obj_const = 0.0
        self.provenance = {}

    @property
    def n_vars(self):
        return len(self.var_names)

    @property
    def n_rows(self):
        return len(self.rows)

    @property
    def n_binaries(self):
        return int(sum(self.is_binary))

    def add_var(self, name, lo=0.0, up=np.inf, binary=False):
        if binary:
            lo, up = 0.0, 1.0
        if lo > up:
            raise ValueError(f"variable {name}: lo > up")
        self.var_names.append(name)
        self.lo.append(float(lo))
        self.up.append(float(up))
        self.is_binary.append(bool(binary))
        return self.n_vars - 1

    def add_binary(self, name):
        return self.add_var(name, binary=True)

    def fix_var(self, j, value):
        self.lo[j] = float(value)
        self.up[j] = float(value)

    def add_constraint(self, coeffs, sense, rhs, name=None, prov=None, rhs_prov=None):
        """Add a row. sense '<' means <=, '>' means >= (stored negated), '='."""
        for j in coeffs:
            if not 0 <= j < self.n_vars:
                raise KeyError(f"constraint references unknown variable {j}")
        if sense == ">":
            coeffs = {j: -v for j, v in coeffs.items()}
            rhs = -rhs
            sense = "<"
        if sense not in "<=":
            raise ValueError(f"bad sense {sense!r}")
        coeffs = {j: float(v) for j, v in coeffs.items() if v != 0.0}
        self.rows.append((coeffs, sense, float(rhs), name or f"c{self.n_rows}"))
        i = self.n_rows - 1
        if prov:
            for j, tag in prov.items():
                self.provenance[("row", i, j)] = tag
        if rhs_prov:
            self.provenance[("rhs", i)] = rhs_prov
        return i

    def set_objective(self, coeffs, const=0.0, prov=None):
        self.obj = {j: float(v) for j, v in coeffs.items()}
        self.obj_const = float(const)
        if prov:
            for j, tag in prov.items():
                self.provenance[("obj", j)] = tag

    def to_dense(self):
        n, m = self.n_vars, self.n_rows
        c = np.zeros(n)
        for j, v in self.obj.items():
            c[j] = v
        A = np.zeros((m, n))
        b = np.zeros(m)
        senses = []
        for i, (coeffs, sense, rhs, _) in enumerate(self.rows):
            for j, v in coeffs.items():
                A[i, j] = v
            b[i] = rhs
            senses.append(sense)
        return (
            self.maximize,
            c,
            self.obj_const,
            A,
            "".join(senses),
            b,
            np.array(self.lo),
            np.array(self.up),
            np.array(self.is_binary, dtype=bool),
        )

    def validate(self):
        for i, (coeffs, sense, rhs, name) in enumerate(self.rows):
            for j in coeffs:
                if not 0 <= j < self.n_vars:
                    raise KeyError(f"row {name} references unknown variable {j}")
        for j, binary in enumerate(self.is_binary):
            if not binary and not (np.isfinite(self.lo[j]) or np.isfinite(self.up[j])):
                raise ValueError(f"variable {self.var_names[j]} is unbounded")

    def write_lp(self):
        """Dump in the industry-standard LP text format (debug path)."""

        def num(v):
            return repr(float(v))

        def expr(coeffs):
            parts = []
            for j in sorted(coeffs):
                v = coeffs[j]
                sign = "-" if v < 0 else "+"
                parts.append(f"{sign} {num(abs(v))} {self.var_names[j]}")
            if not parts:
                return "0"
            out = " ".join(parts)
            return out[2:] if out.startswith("+ ") else out

        lines = ["Maximize" if self.maximize else "Minimize"]
        lines.append(" obj: " + expr(self.obj))
        if self.obj_const:
            lines.append(f"\\ objective constant {num(self.obj_const)}")
        lines.append("Subject To")
        for coeffs, sense, rhs, name in self.rows:
            op = "<=" if sense == "<" else "="
            lines.append(f" {name}: {expr(coeffs)} {op} {num(rhs)}")
        lines.append("Bounds")
        for j, name in enumerate(self.var_names):
            if self.is_binary[j] and self.lo[j] == 0.0 and self.up[j] == 1.0:
                continue
            lo = "-inf" if not np.isfinite(self.lo[j]) else num(self.lo[j])
            up = "+inf" if not np.isfinite(self.up[j]) else num(self.up[j])
            lines.append(f" {lo} <= {name} <= {up}")
        binaries = [n for n, bin_ in zip(self.var_names, self.is_binary) if bin_]
        if binaries:
            lines.append("Binaries")
            lines.append(" " + " ".join(binaries))
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class NeuronBounds:
    """Sound pre-activation intervals per hidden layer, plus the ranges of
    the activated outputs and the final affine output."""

    input_box: Box
    pre: list  # (lo, up) arrays per hidden layer
    post: list  # (lo, up) arrays per hidden layer (after activation)
    output: tuple  # (lo, up) of the network output

    def layer(self, i):
        return self.pre[i]


def _affine_interval(W, bias, lo, up):
    Wp = np.maximum(W, 0.0)
    Wn = np.minimum(W, 0.0)
    return Wp @ lo + Wn @ up + bias, Wp @ up + Wn @ lo + bias


def propagate_bounds(net, box, method="interval"):
    """Per-neuron pre-activation bounds over an input box.

    method="interval" is plain interval arithmetic; method="lp" tightens
    every neuron's interval by maximizing and minimizing its
    pre-activation over the LP relaxation of all preceding layers.
    """
    if not isinstance(box, Box) or not box.is_finite():
        raise ValueError("bound propagation needs a finite input box")
    if box.dim != net.input_dim:
        raise DimensionError("box dimension does not match the network input")
    if method not in ("interval", "lp"):
        raise ValueError(f"unknown bound method {method!r}")
    pre = []
    post = []
    lo, up = box.lower.copy(), box.upper.copy()
    if method == "lp":
        return _propagate_bounds_lp(net, box)
    for i, (W, bias) in enumerate(net.layers):
        zlo, zup = _affine_interval(W, bias, lo, up)
        if i == len(net.layers) - 1:
            return NeuronBounds(box, pre, post, (zlo, zup))
        pre.append((zlo, zup))
        lo, up = _leaky(zlo, net.leak), _leaky(zup, net.leak)
        post.append((lo, up))
    raise AssertionError("unreachable")


def _propagate_bounds_lp(net, box):
    from .solver import solve_lp_relaxation

    interval = propagate_bounds(net, box, method="interval")
    m = MilpModel(maximize=True)
    x_vars = [
        m.add_var(f"x{d}", box.lower[d], box.upper[d]) for d in range(box.dim)
    ]
    prev = x_vars
    pre = []
    post = []
    for i, (W, bias) in enumerate(net.layers):
        last = i == len(net.layers) - 1
        ilo, iup = interval.output if last else interval.pre[i]
        zlo = np.empty_like(ilo)
        zup = np.empty_like(iup)
        for k in range(W.shape[0]):
            coeffs = {prev[j]: W[k, j] for j in range(W.shape[1])}
            for which, sign in (("max", True), ("min", False)):
                m.maximize = sign
                m.set_objective(coeffs, const=bias[k])
                sol = solve_lp_relaxation(m)
                if sol.status != "optimal":
                    raise RuntimeError("bound LP did not solve")
                if sign:
                    zup[k] = sol.objective
                else:
                    zlo[k] = sol.objective
        # The relaxation can only tighten the interval result; intersect
        # to guard against round-off widening.
        zlo = np.maximum(zlo - 1e-9, ilo)
        zup = np.minimum(zup + 1e-9, iup)
        if last:
            return NeuronBounds(box, pre, post, (zlo, zup))
        pre.append((zlo, zup))
        plo, pup = _leaky(zlo, net.leak), _leaky(zup, net.leak)
        post.append((plo, pup))
        new_vars = []
        for k in range(W.shape[0]):
            zhat = m.add_var(f"zh{i}_{k}", zlo[k], zup[k])
            coeffs = {prev[j]: -W[k, j] for j in range(W.shape[1])}
            coeffs[zhat] = 1.0
            m.add_constraint(coeffs, "=", bias[k])
            z, _ = encode_leaky_relu(m, zhat, (zlo[k], zup[k]), net.leak,
                                     name=f"z{i}_{k}")
            new_vars.append(z)
        prev = new_vars
    raise AssertionError("unreachable")


@dataclass
class ReluEncoding:
    zhat: int
    z: int
    beta: int  # -1 when linearized
    leak: float
    bounds: tuple
    offset: float = 0.0

    def complete(self, zhat_val, out):
        shifted = zhat_val - self.offset
        out[self.z] = _leaky(shifted, self.leak)
        if self.beta >= 0:
            out[self.beta] = 1.0 if shifted >= 0 else 0.0


def encode_leaky_relu(m, zhat, bounds, c, name="z", offset=0.0):
    """Exact leaky-ReLU: adds z (and binary beta when needed) with
    the four mixed-integer rows tying z = max(y, c*y) for y = zhat - offset.

    `bounds` is the interval of the shifted quantity y. One-sided
    intervals are linearized with no binary. Returns (z, beta) with beta
    None for the linear cases. The big-M coefficients are tagged "bigM"
    in the provenance map and must never be differentiated.
    """
    lo, up = float(bounds[0]), float(bounds[1])
    if not (np.isfinite(lo) and np.isfinite(up)):
        raise ValueError("leaky ReLU encoding needs finite pre-activation bounds")
    if lo > up:
        raise ValueError("empty pre-activation interval")
    off = float(offset)
    z = m.add_var(name, _leaky(lo, c), _leaky(up, c))
    if lo >= 0:
        m.add_constraint({z: 1.0, zhat: -1.0}, "=", -off, name=f"{name}_id",
                         rhs_prov=("param", "offset") if off else None)
        return z, None
    if up <= 0:
        m.add_constraint({z: 1.0, zhat: -c}, "=", -c * off, name=f"{name}_neg",
                         prov={zhat: ("const", "leak")},
                         rhs_prov=("param", "offset") if off else None)
        return z, None
    beta = m.add_binary(f"{name}_b")
    m.add_constraint({zhat: 1.0, z: -1.0}, "<", off, name=f"{name}_ge1",
                     rhs_prov=("param", "offset") if off else None)
    m.add_constraint({zhat: c, z: -1.0}, "<", c * off, name=f"{name}_ge2",
                     prov={zhat: ("const", "leak")},
                     rhs_prov=("param", "offset") if off else None)
    m.add_constraint(
        {z: 1.0, zhat: -c, beta: -(1.0 - c) * up},
        "<",
        -c * off,
        name=f"{name}_up",
        prov={zhat: ("const", "leak"), beta: ("bigM", "pre_up")},
        rhs_prov=("param", "offset") if off else None,
    )
    m.add_constraint(
        {z: 1.0, zhat: -1.0, beta: -(1.0 - c) * lo},
        "<",
        -off - (1.0 - c) * lo,
        name=f"{name}_lo",
        prov={beta: ("bigM", "pre_lo")},
        rhs_prov=("bigM", "pre_lo"),
    )
    return z, beta


@dataclass
class NetworkEncoding:
    net: object
    input_vars: list
    zhat_vars: list  # per hidden layer
    relus: list  # per hidden layer, list of ReluEncoding
    out_vars: list

    def complete(self, x, out):
        """Fill every internal variable for a concrete input point."""
        x = np.asarray(x, dtype=float)
        for var, val in zip(self.input_vars, x):
            out[var] = val
        y, pres = self.net.forward_trace(x)
        for i, pre in enumerate(pres):
            for k, var in enumerate(self.zhat_vars[i]):
                out[var] = pre[k]
            for k, enc in enumerate(self.relus[i]):
                enc.complete(pre[k], out)
        for var, val in zip(self.out_vars, np.atleast_1d(y)):
            out[var] = val
        return out


def encode_network(m, net, input_vars, bounds, prefix="n"):
    """Encode a whole PwlNetwork; returns (output vars, NetworkEncoding).

    `bounds` must have been propagated for the same input box that the
    model's input variables are constrained to.
    """
    if len(input_vars) != net.input_dim:
        raise DimensionError("wrong number of input variables")
    if len(bounds.pre) != len(net.layers) - 1:
        raise ValueError("bounds do not match the network depth")
    for d, var in enumerate(input_vars):
        if m.lo[var] < bounds.input_box.lower[d] - 1e-9 or (
            m.up[var] > bounds.input_box.upper[d] + 1e-9
        ):
            raise ValueError("model input bounds exceed the box used for propagation")
    prev = list(input_vars)
    zhat_all = []
    relus_all = []
    for i, (W, bias) in enumerate(net.layers[:-1]):
        zlo, zup = bounds.pre[i]
        zhats = []
        relus = []
        new_prev = []
        for k in range(W.shape[0]):
            zhat = m.add_var(f"{prefix}_zh{i}_{k}", zlo[k], zup[k])
            prov = {prev[j]: ("param", "W", i, k, j) for j in range(W.shape[1])}
            coeffs = {prev[j]: -W[k, j] for j in range(W.shape[1])}
            coeffs[zhat] = 1.0
            m.add_constraint(
                coeffs,
                "=",
                bias[k],
                name=f"{prefix}_aff{i}_{k}",
                prov=prov,
                rhs_prov=("param", "b", i, k),
            )
            z, beta = encode_leaky_relu(
                m, zhat, (zlo[k], zup[k]), net.leak, name=f"{prefix}_z{i}_{k}"
            )
            zhats.append(zhat)
            relus.append(ReluEncoding(zhat, z, -1 if beta is None else beta,
                                      net.leak, (zlo[k], zup[k])))
            new_prev.append(z)
        zhat_all.append(zhats)
        relus_all.append(relus)
        prev = new_prev
    W, bias = net.layers[-1]
    olo, oup = bounds.output
    out_vars = []
    li = len(net.layers) - 1
    for k in range(W.shape[0]):
        ov = m.add_var(f"{prefix}_out{k}", olo[k], oup[k])
        prov = {prev[j]: ("param", "W", li, k, j) for j in range(W.shape[1])}
        coeffs = {prev[j]: -W[k, j] for j in range(W.shape[1])}
        coeffs[ov] = 1.0
        m.add_constraint(
            coeffs,
            "=",
            bias[k],
            name=f"{prefix}_out{k}_eq",
            prov=prov,
            rhs_prov=("param", "b", li, k),
        )
        out_vars.append(ov)
    return out_vars, NetworkEncoding(net, list(input_vars), zhat_all, relus_all, out_vars)


@dataclass
class AbsEncoding:
    R: np.ndarray
    x_eq: np.ndarray
    x_vars: list
    t_vars: list
    nt_vars: list
    pos: list  # ReluEncoding
    neg: list  # ReluEncoding
    total: int

    def complete(self, x, out):
        t = self.R @ (np.asarray(x, dtype=float) - self.x_eq)
        for i in range(len(self.t_vars)):
            out[self.t_vars[i]] = t[i]
            out[self.nt_vars[i]] = -t[i]
            self.pos[i].complete(t[i], out)
            self.neg[i].complete(-t[i], out)
        out[self.total] = float(np.sum(np.abs(t)))
        return out


def encode_abs_l1(m, R, x_vars, x_eq, box, prefix="l1"):
    """Scalar variable equal to ||R (x - x_eq)||_1 via |t| = relu(t) + relu(-t)."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    x_eq = np.asarray(x_eq, dtype=float)
    n = len(x_vars)
    if R.shape[1] != n or x_eq.size != n or box.dim != n:
        raise DimensionError("R, x_eq, box and x variables disagree on dimension")
    dlo = box.lower - x_eq
    dup = box.upper - x_eq
    t_vars, nt_vars, pos_enc, neg_enc = [], [], [], []
    pos_vars, neg_vars = [], []
    for i in range(R.shape[0]):
        tlo, tup = _affine_interval(R[i : i + 1], np.zeros(1), dlo, dup)
        tlo, tup = float(tlo[0]), float(tup[0])
        if not (np.isfinite(tlo) and np.isfinite(tup)):
            raise ValueError("unbounded row term in l1 encoding")
        t = m.add_var(f"{prefix}_t{i}", tlo, tup)
        prov = {x_vars[j]: ("param", "R", i, j) for j in range(n)}
        coeffs = {x_vars[j]: -R[i, j] for j in range(n)}
        coeffs[t] = 1.0
        m.add_constraint(
            coeffs,
            "=",
            -float(R[i] @ x_eq),
            name=f"{prefix}_t{i}_eq",
            prov=prov,
            rhs_prov=("mixed", "R.x_eq", i),
        )
        nt = m.add_var(f"{prefix}_nt{i}", -tup, -tlo)
        m.add_constraint({t: 1.0, nt: 1.0}, "=", 0.0, name=f"{prefix}_nt{i}_eq")
        p, pb = encode_leaky_relu(m, t, (tlo, tup), 0.0, name=f"{prefix}_p{i}")
        q, qb = encode_leaky_relu(m, nt, (-tup, -tlo), 0.0, name=f"{prefix}_q{i}")
        if tlo < 0.0 < tup:
            # p + q = |t| everywhere, so the chord of |t| over [tlo, tup]
            # caps it: tightens the LP relaxation when |t| is maximized.
            s = (tup + tlo) / (tup - tlo)
            m.add_constraint(
                {p: 1.0, q: 1.0, t: -s},
                "<",
                -tlo - s * tlo,
                name=f"{prefix}_chord{i}",
            )
        t_vars.append(t)
        nt_vars.append(nt)
        pos_enc.append(ReluEncoding(t, p, -1 if pb is None else pb, 0.0, (tlo, tup)))
        neg_enc.append(ReluEncoding(nt, q, -1 if qb is None else qb, 0.0, (-tup, -tlo)))
        pos_vars.append(p)
        neg_vars.append(q)
    total_up = float(
        sum(max(m.up[p], 0.0) + max(m.up[q], 0.0) for p, q in zip(pos_vars, neg_vars))
    )
    total = m.add_var(f"{prefix}_sum", 0.0, total_up)
    coeffs = {total: 1.0}
    for p in pos_vars:
        coeffs[p] = -1.0
    for q in neg_vars:
        coeffs[q] = -1.0
    m.add_constraint(coeffs, "=", 0.0, name=f"{prefix}_sum_eq")
    return total, AbsEncoding(R, x_eq, list(x_vars), t_vars, nt_vars,
                              pos_enc, neg_enc, total)


@dataclass
class LinfEncoding:
    x_eq: np.ndarray
    x_vars: list
    selectors: list
    q: int

    def complete(self, x, out):
        dev = np.asarray(x, dtype=float) - self.x_eq
        signed = np.concatenate([dev, -dev])
        q = float(np.max(np.abs(dev)))
        out[self.q] = q
        k_star = int(np.argmax(signed))
        for k, s in enumerate(self.selectors):
            out[s] = 1.0 if k == k_star else 0.0
        return out


def encode_linf(m, x_vars, x_eq, box, prefix="linf"):
    """Scalar variable equal to ||x - x_eq||_inf over a finite box.

    Uses 2n selector binaries summing to one; the selected signed
    deviation is forced up to q by a big-M row, every deviation bounds q
    from below.
    """
    x_eq = np.asarray(x_eq, dtype=float)
    n = len(x_vars)
    if box.dim != n or x_eq.size != n:
        raise DimensionError("box/x_eq dimension mismatch")
    if not box.is_finite():
        raise ValueError("linf encoding needs a finite box")
    dlo = box.lower - x_eq
    dup = box.upper - x_eq
    e_lo = np.concatenate([dlo, -dup])
    e_up = np.concatenate([dup, -dlo])
    q_up = float(np.max(e_up))
    q = m.add_var(f"{prefix}_q", max(0.0, float(np.max(e_lo))), max(q_up, 0.0))
    selectors = []
    sel_coeffs = {}
    for k in range(2 * n):
        j = k % n
        sgn = 1.0 if k < n else -1.0
        m.add_constraint(
            {x_vars[j]: sgn, q: -1.0},
            "<",
            sgn * x_eq[j],
            name=f"{prefix}_ge{k}",
        )
        s = m.add_binary(f"{prefix}_s{k}")
        selectors.append(s)
        sel_coeffs[s] = 1.0
        M = q_up - float(e_lo[k])
        m.add_constraint(
            {q: 1.0, x_vars[j]: -sgn, s: M},
            "<",
            M - sgn * x_eq[j],
            name=f"{prefix}_le{k}",
            prov={s: ("bigM", "linf"), },
            rhs_prov=("bigM", "linf"),
        )
    m.add_constraint(sel_coeffs, "=", 1.0, name=f"{prefix}_pick")
    return q, LinfEncoding(x_eq, list(x_vars), selectors, q)


@dataclass
class ClampEncoding:
    lo_limit: float
    hi_limit: float
    y: int
    yh: int
    ly: int
    hi_relu: ReluEncoding
    lo_relu: ReluEncoding
    out: int

    def complete(self, y_val, out):
        out[self.yh] = y_val - self.hi_limit
        out[self.ly] = self.lo_limit - y_val
        self.hi_relu.complete(y_val - self.hi_limit, out)
        self.lo_relu.complete(self.lo_limit - y_val, out)
        out[self.out] = float(np.clip(y_val, self.lo_limit, self.hi_limit))
        return out


def encode_clamp(m, y_var, lo_limit, hi_limit, bounds, prefix="clamp"):
    """Variable equal to clamp(y, lo, hi) = y - relu(y-hi) + relu(lo-y)."""
    lo_limit, hi_limit = float(lo_limit), float(hi_limit)
    if lo_limit > hi_limit:
        raise ValueError("clamp with lo > hi")
    ylo, yup = float(bounds[0]), float(bounds[1])
    if not (np.isfinite(ylo) and np.isfinite(yup)):
        raise ValueError("clamp encoding needs finite bounds on y")
    yh = m.add_var(f"{prefix}_yh", ylo - hi_limit, yup - hi_limit)
    m.add_constraint({yh: 1.0, y_var: -1.0}, "=", -hi_limit, name=f"{prefix}_yh_eq")
    p, pb = encode_leaky_relu(m, yh, (ylo - hi_limit, yup - hi_limit), 0.0,
                              name=f"{prefix}_hi")
    ly = m.add_var(f"{prefix}_ly", lo_limit - yup, lo_limit - ylo)
    m.add_constraint({ly: 1.0, y_var: 1.0}, "=", lo_limit, name=f"{prefix}_ly_eq")
    r, rb = encode_leaky_relu(m, ly, (lo_limit - yup, lo_limit - ylo), 0.0,
                              name=f"{prefix}_lo")
    out_lo = float(np.clip(ylo, lo_limit, hi_limit))
    out_up = float(np.clip(yup, lo_limit, hi_limit))
    out = m.add_var(f"{prefix}_out", out_lo, out_up)
    m.add_constraint({out: 1.0, y_var: -1.0, p: 1.0, r: -1.0}, "=", 0.0,
                     name=f"{prefix}_out_eq")
    enc = ClampEncoding(
        lo_limit, hi_limit, y_var, yh, ly,
        ReluEncoding(yh, p, -1 if pb is None else pb, 0.0,
                     (ylo - hi_limit, yup - hi_limit)),
        ReluEncoding(ly, r, -1 if rb is None else rb, 0.0,
                     (lo_limit - yup, lo_limit - ylo)),
        out,
    )
    return out, enc
