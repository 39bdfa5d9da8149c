"""Experiment state document: versioned JSON, written atomically.

One file carries everything a stage needs from the previous stages:
system description, the three networks, and the training/expansion
histories. Model blocks are validated on load, so a corrupted or
hand-edited file fails at the boundary instead of deep in a solve.
"""

import json
import os
import tempfile

import numpy as np

from .lyapunov import MonotonicLayer, MonotonicLyapunov, MonotonicUnit
from .pwl import DynamicsModel, PolicyModel, PwlNetwork

FORMAT_VERSION = 1


class StateError(ValueError):
    pass


def _net_doc(net):
    return {
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in net.layers],
        "leak": net.leak,
    }


def _net_from(doc):
    layers = [(np.array(l["W"], dtype=float), np.array(l["b"], dtype=float))
              for l in doc["layers"]]
    return PwlNetwork(layers, leak=float(doc["leak"]))


def dynamics_doc(dyn):
    doc = {
        "net": _net_doc(dyn.net),
        "x_eq": dyn.x_eq.tolist(),
        "u_eq": dyn.u_eq.tolist(),
        "residual": dyn.residual,
    }
    report = getattr(dyn, "fit_report", None)
    if report is not None:
        doc["fit_report"] = report
    return doc


def dynamics_from_doc(doc):
    dyn = DynamicsModel(_net_from(doc["net"]),
                        np.array(doc["x_eq"], dtype=float),
                        np.array(doc["u_eq"], dtype=float),
                        residual=bool(doc.get("residual", False)))
    if "fit_report" in doc:
        dyn.fit_report = doc["fit_report"]
    return dyn


def policy_doc(policy):
    return {
        "net": _net_doc(policy.net),
        "x_eq": policy.x_eq.tolist(),
        "u_eq": policy.u_eq.tolist(),
        "u_min": policy.u_min.tolist(),
        "u_max": policy.u_max.tolist(),
    }


def policy_from_doc(doc):
    return PolicyModel(_net_from(doc["net"]),
                       np.array(doc["x_eq"], dtype=float),
                       np.array(doc["u_eq"], dtype=float),
                       np.array(doc["u_min"], dtype=float),
                       np.array(doc["u_max"], dtype=float))


def lyapunov_doc(V):
    layers = []
    for layer in V.layers:
        groups = []
        for group in layer.groups:
            groups.append([
                {
                    "v": np.asarray(v, dtype=float).tolist(),
                    "c": float(c),
                    "a": unit.a.tolist(),
                    "b": unit.b.tolist(),
                    "eps": unit.eps,
                    "plus_class": unit.plus_class,
                }
                for v, c, unit in group
            ])
        layers.append(groups)
    doc = {
        "layers": layers,
        "x_eq": V.x_eq.tolist(),
        "lam": V.lam,
    }
    if V.R is not None:
        doc["R"] = V.R.tolist()
    return doc


def lyapunov_from_doc(doc):
    layers = []
    for groups in doc["layers"]:
        parsed = []
        for group in groups:
            parsed.append([
                (np.array(t["v"], dtype=float), float(t["c"]),
                 MonotonicUnit(t["a"], t["b"], eps=float(t["eps"]),
                               plus_class=t["plus_class"]))
                for t in group
            ])
        layers.append(MonotonicLayer(parsed))
    R = np.array(doc["R"], dtype=float) if "R" in doc else None
    V = MonotonicLyapunov(layers, np.array(doc["x_eq"], dtype=float),
                          R=R, lam=float(doc["lam"]))
    V.validate()
    return V


def new_state(system_name, dt, seed):
    return {
        "format_version": FORMAT_VERSION,
        "system": {"name": system_name, "dt": dt},
        "seed": seed,
        "stage": "new",
        "dynamics": None,
        "policy": None,
        "lyapunov": None,
        "train_history": [],
        "roa_history": [],
        "verify": None,
    }


def save_state(path, state):
    """Serialize deterministically and replace the file atomically."""
    text = json.dumps(state, indent=2, sort_keys=True,
                      ensure_ascii=False, allow_nan=False) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".state-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_state(path):
    try:
        with open(path, encoding="utf-8") as fh:
            state = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise StateError(f"cannot read state file {path}: {exc}") from exc
    version = state.get("format_version")
    if version != FORMAT_VERSION:
        raise StateError(
            f"unrecognized state format version {version!r} in {path}")
    # validate the model blocks at the boundary
    if state.get("dynamics") is not None:
        dynamics_from_doc(state["dynamics"])
    if state.get("policy") is not None:
        policy_from_doc(state["policy"])
    if state.get("lyapunov") is not None:
        lyapunov_from_doc(state["lyapunov"])
    return state
