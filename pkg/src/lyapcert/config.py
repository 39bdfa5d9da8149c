"""Experiment configuration: INI file with typed sections, env overrides.

Unknown sections or keys are hard errors so a typo cannot silently fall
back to a default. Environment variables prefixed LYAPCERT_ override file
values, e.g. LYAPCERT_TRAIN_EPS=0.02 or LYAPCERT_DYNAMICS_FIT_SAMPLES=1000.
"""

import configparser
import os


def _int_tuple(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(int(tok) for tok in text.split(","))


def _bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "system": {
        "name": str,
        "dt": float,
    },
    "dynamics_fit": {
        "arch": _int_tuple,
        "samples": int,
        "seed": int,
        "epochs": int,
        "batch": int,
        "step": float,
        "leak": float,
        "holdout": float,
        "residual_threshold": float,
    },
    "train": {
        "eps": float,
        "step_size": float,
        "max_iterations": int,
        "seed": int,
        "patience": int,
        "certify_tol": float,
        "node_limit": int,
        "exclusion_radius": float,
        "region_count": int,
        "region_start": float,
        "policy_arch": _int_tuple,
        "v_order": int,
        "lam": float,
    },
    "roa": {
        "level": float,
        "step_size": float,
        "max_trials": int,
        "max_outer": int,
        "exclusion": float,
        "g_tol": float,
    },
    "report": {
        "grid": int,
        "rollouts": int,
        "horizon": float,
    },
}

DEFAULTS = {
    "system": {"name": "pendulum", "dt": 0.01},
    "dynamics_fit": {
        "arch": (16, 16),
        "samples": 50_000,
        "seed": 0,
        "epochs": 300,
        "batch": 512,
        "step": 2e-2,
        "leak": 0.1,
        "holdout": 0.1,
        "residual_threshold": 1e-2,
    },
    "train": {
        "eps": 0.01,
        "step_size": 1e-3,
        "max_iterations": 500,
        "seed": 0,
        "patience": 5,
        "certify_tol": 1e-6,
        "node_limit": 200_000,
        "exclusion_radius": 0.0,
        "region_count": 5,
        "region_start": 0.2,
        "policy_arch": (),
        "v_order": 4,
        "lam": 0.1,
    },
    "roa": {
        "level": 3.0,
        "step_size": 1e-3,
        "max_trials": 10,
        "max_outer": 50,
        "exclusion": 1e-3,
        "g_tol": 1e-6,
    },
    "report": {"grid": 201, "rollouts": 50, "horizon": 10.0},
}

ENV_PREFIX = "LYAPCERT_"


class ConfigError(ValueError):
    pass


def _convert(section, key, raw):
    conv = SCHEMA[section][key]
    try:
        if conv is _bool:
            return _bool(raw)
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(
            f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc


def _env_overrides(environ):
    """Match LYAPCERT_<SECTION>_<KEY> variables against the schema."""
    found = []
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        for section in SCHEMA:
            prefix = section + "_"
            if rest.startswith(prefix) and rest[len(prefix):] in SCHEMA[section]:
                found.append((section, rest[len(prefix):], raw))
                break
        else:
            raise ConfigError(f"unrecognized override variable {name}")
    return found


def load_config(path=None, environ=None):
    """Defaults, overlaid by the INI file, overlaid by the environment."""
    cfg = {section: dict(values) for section, values in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                cfg[section][key] = _convert(section, key, raw)
    environ = os.environ if environ is None else environ
    for section, key, raw in _env_overrides(environ):
        cfg[section][key] = _convert(section, key, raw)
    return cfg
