"""Command line pipeline around the library.

    lyapcert fit-dynamics --state run.json [--config exp.ini]
    lyapcert init         --state run.json
    lyapcert train        --state run.json --out-dir results
    lyapcert verify       --state run.json
    lyapcert expand       --state run.json --out-dir results
    lyapcert simulate     --state run.json --out-dir results
    lyapcert report       --state run.json --out-dir results

Every command reads and rewrites one JSON state file, so a run can be
resumed or inspected between stages. Exit codes: 0 on success, 1 on a
malformed config or state file (or a stage run out of order), 2 when
verification produces a counterexample.
"""

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, load_config
from .report import (ROA_FIELDS, TRAIN_FIELDS, render_levels, write_csv,
                     write_trajectories_csv)
from .roa import expand_roa, find_lstar, max_level_in_domain
from .state import (StateError, dynamics_doc, dynamics_from_doc, load_state,
                    lyapunov_doc, lyapunov_from_doc, new_state, policy_doc,
                    policy_from_doc, save_state)
from .systems import SYSTEMS, simulate_closed_loop
from .train import (TrainConfig, fit_dynamics, lqr_init, nested_boxes,
                    train_minmax)
from .verify import verify_box

CONVERGE_TOL = 0.05  # rollout counts as settled inside this inf-norm ball


def _json_safe(value):
    """Plain python scalars for the state document; non-finite -> None."""
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
        return int(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value]
    return value


def _safe_rows(rows):
    return [{k: _json_safe(v) for k, v in row.items()} for row in rows]


def _make_system(name, dt):
    if name not in SYSTEMS:
        known = ", ".join(sorted(SYSTEMS))
        raise ConfigError(f"unknown system {name!r} (known: {known})")
    return SYSTEMS[name](dt=dt)


def _system_from_state(state):
    return _make_system(state["system"]["name"], state["system"]["dt"])


def _require(state, *blocks):
    produced_by = {"dynamics": "fit-dynamics", "policy": "init",
                   "lyapunov": "init"}
    for block in blocks:
        if state.get(block) is None:
            raise StateError(
                f"state has no {block} model yet; "
                f"run `lyapcert {produced_by[block]}` first")


def _models(state):
    return (dynamics_from_doc(state["dynamics"]),
            policy_from_doc(state["policy"]),
            lyapunov_from_doc(state["lyapunov"]))


def _train_config(cfg, schedule=None, step_size=None, log=None):
    tc = cfg["train"]
    return TrainConfig(
        step_size=tc["step_size"] if step_size is None else step_size,
        max_iterations=tc["max_iterations"], eps=tc["eps"],
        region_schedule=schedule, seed=tc["seed"],
        certify_tol=tc["certify_tol"], patience=tc["patience"],
        node_limit=tc["node_limit"],
        exclusion_radius=tc["exclusion_radius"], log=log)


def cmd_fit_dynamics(args, cfg):
    sec = cfg["system"]
    system = _make_system(sec["name"], sec["dt"])
    fc = cfg["dynamics_fit"]
    dyn = fit_dynamics(system, arch=fc["arch"], samples=fc["samples"],
                       seed=fc["seed"], leak=fc["leak"], epochs=fc["epochs"],
                       batch=fc["batch"], step=fc["step"],
                       holdout=fc["holdout"],
                       residual_threshold=fc["residual_threshold"])
    state = new_state(sec["name"], sec["dt"], cfg["train"]["seed"])
    state["dynamics"] = dynamics_doc(dyn)
    state["stage"] = "dynamics"
    save_state(args.state, state)
    print(f"fit {sec['name']} dynamics: holdout max residual "
          f"{dyn.fit_report['max_residual']:.3g} "
          f"({dyn.fit_report['parameters']} parameters)")
    return 0


def cmd_init(args, cfg):
    state = load_state(args.state)
    _require(state, "dynamics")
    system = _system_from_state(state)
    dyn = dynamics_from_doc(state["dynamics"])
    tc = cfg["train"]
    policy, V = lqr_init(system, dyn, policy_arch=tc["policy_arch"],
                         order=tc["v_order"], lam=tc["lam"], seed=tc["seed"])
    state["policy"] = policy_doc(policy)
    state["lyapunov"] = lyapunov_doc(V)
    state["stage"] = "initialized"
    save_state(args.state, state)
    units = sum(layer.n_units for layer in V.layers)
    print(f"initialized controller and candidate ({units} monotonic units)")
    return 0


def cmd_train(args, cfg):
    state = load_state(args.state)
    _require(state, "dynamics", "policy", "lyapunov")
    system = _system_from_state(state)
    dyn, policy, V = _models(state)
    tc = cfg["train"]
    schedule = nested_boxes(system.domain, system.x_eq,
                            n=tc["region_count"], start=tc["region_start"])
    train_cfg = _train_config(cfg, schedule=schedule, log=sys.stdout)
    policy, V, certified, history = train_minmax(dyn, policy, V, train_cfg)
    state["policy"] = policy_doc(policy)
    state["lyapunov"] = lyapunov_doc(V)
    state["train_history"] = _safe_rows(history)
    state["stage"] = "trained"
    save_state(args.state, state)
    write_csv(os.path.join(args.out_dir, "train_history.csv"),
              history, TRAIN_FIELDS)
    last = history[-1]
    verdict = "certified" if certified else "not certified"
    print(f"training finished after {len(history)} verifier calls: "
          f"{verdict} on the full domain (last gamma* {last['gamma_star']:.3g})")
    return 0


def cmd_verify(args, cfg):
    state = load_state(args.state)
    _require(state, "dynamics", "policy", "lyapunov")
    system = _system_from_state(state)
    dyn, policy, V = _models(state)
    tc = cfg["train"]
    rep = verify_box(dyn, policy, V, system.domain, tc["eps"],
                     certify_tol=tc["certify_tol"],
                     node_limit=tc["node_limit"])
    state["verify"] = {
        "certified": bool(rep.certified),
        "gamma_star": _json_safe(rep.gamma_star),
        "counterexample": _json_safe(rep.counterexample),
        "eps": tc["eps"],
        "region": "domain",
    }
    state["stage"] = "verified" if rep.certified else state["stage"]
    save_state(args.state, state)
    if rep.certified:
        print(f"certified: decrease condition holds on the domain "
              f"(gamma* bound {rep.gamma_star:.3g})")
        return 0
    ce = np.array2string(np.asarray(rep.counterexample), precision=6)
    print(f"counterexample found: gamma* = {rep.gamma_star:.6g} at x = {ce}")
    return 2


def cmd_expand(args, cfg):
    state = load_state(args.state)
    _require(state, "dynamics", "policy", "lyapunov")
    system = _system_from_state(state)
    dyn, policy, V = _models(state)
    rc = cfg["roa"]
    cfg_t = _train_config(cfg, step_size=rc["step_size"])
    policy, V, history = expand_roa(
        dyn, policy, V, rc["level"], cfg_t, domain=system.domain,
        max_trials=rc["max_trials"], max_outer=rc["max_outer"],
        exclusion=rc["exclusion"], g_tol=rc["g_tol"])
    state["policy"] = policy_doc(policy)
    state["lyapunov"] = lyapunov_doc(V)
    state["roa_history"] = _safe_rows(history)
    save_state(args.state, state)
    write_csv(os.path.join(args.out_dir, "roa_history.csv"),
              history, ROA_FIELDS)
    if not history:
        print(f"could not certify the level {rc['level']:g} sublevel set, "
              "so there is nothing to expand; the partially trained "
              "candidate was saved")
        return 0
    state["stage"] = "expanded"
    save_state(args.state, state)
    first, final = history[0], max(
        (row for row in history if row["accepted"]),
        key=lambda row: row["iteration"])
    print(f"inscribed square half-width {first['half_width']:.4g} -> "
          f"{final['half_width']:.4g} over {len(history) - 1} passes")
    return 0


def _sample_initial_states(system, V, level, rng, count):
    """Initial states inside the certified region (rejection sampling)."""
    from .lyapunov import eval_lyapunov, level_bounding_box

    if V is not None and level is not None:
        try:
            box = level_bounding_box(V, level)
        except ValueError:
            box = system.domain
        draws = []
        tries = 0
        while len(draws) < count and tries < 1000 * count:
            x = box.sample(rng, 1)[0]
            tries += 1
            if eval_lyapunov(V, x) <= level and system.domain.contains(x):
                draws.append(x)
        if len(draws) == count:
            return draws
    return list(system.domain.sample(rng, count))


def cmd_simulate(args, cfg):
    state = load_state(args.state)
    _require(state, "dynamics", "policy")
    system = _system_from_state(state)
    policy = policy_from_doc(state["policy"])
    V = (lyapunov_from_doc(state["lyapunov"])
         if state.get("lyapunov") is not None else None)
    rc = cfg["report"]
    seed = args.seed if args.seed is not None else state["seed"]
    rng = np.random.default_rng(seed)
    steps = max(1, int(round(rc["horizon"] / system.dt)))
    level = cfg["roa"]["level"] if state.get("roa_history") else None
    starts = _sample_initial_states(system, V, level, rng, rc["rollouts"])
    trajectories = []
    settled = 0
    for x0 in starts:
        traj = simulate_closed_loop(system, policy, x0, steps, V=V)
        trajectories.append(traj)
        dist = np.max(np.abs(traj.states - system.x_eq), axis=1)
        if not traj.escaped and np.any(dist <= CONVERGE_TOL):
            settled += 1
    path = os.path.join(args.out_dir, "trajectories.csv")
    write_trajectories_csv(path, trajectories)
    state["simulate"] = {
        "rollouts": len(trajectories),
        "converged": settled,
        "tolerance": CONVERGE_TOL,
        "horizon": rc["horizon"],
        "seed": seed,
    }
    save_state(args.state, state)
    print(f"{settled}/{len(trajectories)} rollouts reached the "
          f"{CONVERGE_TOL:g} ball around the equilibrium within "
          f"{rc['horizon']:g}s ({path})")
    return 0


def cmd_report(args, cfg):
    state = load_state(args.state)
    _require(state, "lyapunov")
    system = _system_from_state(state)
    V = lyapunov_from_doc(state["lyapunov"])
    level = cfg["roa"]["level"]
    rho = max_level_in_domain(V, system.domain)
    levels = [level]
    labels = [f"V = {level:g}"]
    if rho > 0.0 and abs(rho - level) > 1e-9 * max(1.0, level):
        levels.append(rho)
        labels.append(f"V = {rho:.4g} (largest level inside the domain)")
    half_width = None
    for row in reversed(state.get("roa_history") or []):
        if row.get("accepted"):
            half_width = row["half_width"]
            break
    if half_width is None:
        try:
            half_width = find_lstar(V, level).half_width
        except (ValueError, RuntimeError):
            half_width = None
    written = []
    figure = os.path.join(args.out_dir, "level_sets.svg")
    render_levels(V, levels, system.domain, figure, half_width=half_width,
                  grid=cfg["report"]["grid"], labels=labels)
    written.append(figure)
    for name, rows, fields in (
            ("train_history.csv", state.get("train_history") or [],
             TRAIN_FIELDS),
            ("roa_history.csv", state.get("roa_history") or [], ROA_FIELDS)):
        path = os.path.join(args.out_dir, name)
        write_csv(path, rows, fields)
        written.append(path)
    print("wrote " + ", ".join(written))
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lyapcert",
        description="Learn and certify a Lyapunov-stable controller.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")
    commands = [
        ("fit-dynamics", cmd_fit_dynamics,
         "regress a piecewise-linear model of the true dynamics"),
        ("init", cmd_init,
         "initialize the controller and candidate from the LQR solution"),
        ("train", cmd_train,
         "run the certify/descend loop over the nested region schedule"),
        ("verify", cmd_verify,
         "check the decrease condition on the full domain"),
        ("expand", cmd_expand,
         "grow the certified sublevel set at the configured level"),
        ("simulate", cmd_simulate,
         "roll out the true dynamics from sampled initial states"),
        ("report", cmd_report,
         "write level-set figures and history tables"),
    ]
    for name, func, help_text in commands:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None, metavar="FILE",
                        help="INI config file (defaults apply without one)")
        sp.add_argument("--state", required=True, metavar="FILE",
                        help="experiment state JSON, created by fit-dynamics")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the seeds from the config")
        sp.add_argument("--out-dir", default=".", metavar="DIR",
                        help="directory for CSV and SVG output")
        sp.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["dynamics_fit"]["seed"] = args.seed
            cfg["train"]["seed"] = args.seed
        os.makedirs(args.out_dir, exist_ok=True)
        return args.func(args, cfg)
    except (ConfigError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
