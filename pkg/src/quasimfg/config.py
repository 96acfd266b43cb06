"""Experiment configuration: a flat TOML document.

Every key is optional; missing keys take the defaults of the named
experiment.  A ``[manifest]`` table (written by the runner next to the
results) is ignored on input, so a manifest can be fed back as a config.

Grammar (one ``key = value`` per line, ``#`` starts a comment)::

    experiment   = "theorem41_decay"     # see `quasimfg list`
    dim          = 1                     # 1 or 2
    n            = 128                   # points per axis, power of two >= 16
    hamiltonian  = "quadratic"           # or "soft_linear"
    kappa        = 1.0                   # soft_linear slope
    eps          = 0.15                  # kernel radius
    strength     = 0.25                  # coupling constant c_F
    well_depth   = 700.0                 # amplitude of the double-well potential
    sigma        = 1.0                   # player noise
    sigma_p      = 1.0                   # noise of the fictitious dynamics
    rho          = 1e-3                  # discount rate
    m0           = "perturbed_equilibrium"  # "uniform" | "bump" | "perturbed_equilibrium"
    m0_center    = 0.5
    m0_width     = 0.08
    m0_amplitude = 0.05
    T            = 10.0
    dt           = 0.01
    store_every  = 10
    seed         = 0
    output_dir   = "results"             # results go to <output_dir>/<experiment>/
    ...

See ``DEFAULTS`` for the complete key list.
"""
from __future__ import annotations

import json
import math
import re
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


class _Invalid(Exception):
    def __init__(self, key, message):
        super().__init__(message)
        self.key, self.message = key, message


DEFAULTS: dict = {
    "experiment": "ergodic_equilibrium",
    "dim": 1,
    "n": 128,
    "hamiltonian": "quadratic",
    "kappa": 1.0,
    "eps": 0.15,
    "strength": 0.25,
    "well_depth": 700.0,
    "sigma": 1.0,
    "sigma_p": 1.0,
    "rho": 1e-3,
    "m0": "uniform",
    "m0_center": 0.5,
    "m0_width": 0.08,
    "m0_amplitude": 0.05,
    "T": 10.0,
    "dt": 0.01,
    "store_every": 10,
    "seed": 0,
    "hjb_tol": 1e-10,
    "picard_tol": 1e-11,
    "damping": 0.5,
    "rho_list": [1e-1, 1e-2, 1e-3, 1e-4],
    "pairs": 20,
    "lipschitz_trials": 64,
    "N_list": [16, 64, 256, 1024],
    "replicas": 32,
    "checkpoints": [0.5, 1.0],
    "loo_N_list": [2, 8, 32],
    "loo_steps": 100,
    "tau": 200.0,
    "paths": 64,
    "ds": 2e-3,
    "samples": 20,
    "compare_discounted": True,
    "output_dir": "results",
}

# per-experiment defaults layered over DEFAULTS
EXPERIMENT_DEFAULTS: dict = {
    "ergodic_equilibrium": {},
    "small_discount_limit": {},
    "qss_evolution": {"m0": "bump", "m0_center": 0.3, "m0_width": 0.1, "T": 1.0, "dt": 0.005, "store_every": 20},
    "theorem41_decay": {"m0": "perturbed_equilibrium", "T": 10.0, "dt": 0.01, "store_every": 10},
    "chaos_scaling": {
        "strength": 1.0,
        "well_depth": 0.0,
        "sigma": 0.1,
        "sigma_p": 0.1,
        "m0": "bump",
        "m0_center": 0.5,
        "m0_width": 0.08,
        "dt": 2e-3,
        "seed": 1,
    },
    "leave_one_out": {
        "strength": 1.0,
        "well_depth": 0.0,
        "sigma": 0.1,
        "sigma_p": 0.1,
        "m0": "bump",
        "m0_center": 0.5,
        "m0_width": 0.08,
        "dt": 1e-2,
    },
    "ergodic_cost_mc": {"well_depth": 0.0, "strength": 1.0, "m0": "bump", "m0_center": 0.4, "m0_width": 0.1},
    "holder_half": {"m0": "bump", "m0_center": 0.3, "m0_width": 0.1, "T": 1.0, "dt": 0.01},
    "continuous_dependence": {"rho": 0.5},
}

LIST_KEYS = {"rho_list", "N_list", "checkpoints", "loo_N_list"}
INT_KEYS = {"dim", "n", "store_every", "seed", "pairs", "lipschitz_trials", "replicas", "loo_steps", "paths", "samples"}
STR_KEYS = {"experiment", "hamiltonian", "m0", "output_dir"}
BOOL_KEYS = {"compare_discounted"}
POSITIVE = {"kappa", "eps", "sigma", "sigma_p", "rho", "T", "dt", "hjb_tol", "picard_tol", "tau", "ds", "m0_width"}
M0_KINDS = ("uniform", "bump", "perturbed_equilibrium")


def _line_of(text: str, key: str) -> str:
    for i, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"\s*({re.escape(key)}\s*=|\[\s*{re.escape(key)}\s*\])", line):
            return f"line {i}: "
    return ""


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def to_toml(self, manifest: dict | None = None) -> str:
        lines = [f"{k} = {_toml_value(v)}" for k, v in self.values.items()]
        if manifest:
            lines += ["", "[manifest]"] + [f"{k} = {_toml_value(v)}" for k, v in manifest.items()]
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a config document; raises :class:`ConfigError`."""
    from .experiments import REGISTRY

    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    raw.pop("manifest", None)
    name = raw.get("experiment", DEFAULTS["experiment"])
    if name not in REGISTRY:
        raise ConfigError(f"{_line_of(text, 'experiment')}unknown experiment {name!r}; run `quasimfg list`")
    values = dict(DEFAULTS)
    values.update(EXPERIMENT_DEFAULTS.get(name, {}))
    for key, val in raw.items():
        where = _line_of(text, key)
        if isinstance(val, dict):
            raise ConfigError(f"{where}table [{key}] is not allowed (the format is flat)")
        if key not in DEFAULTS:
            raise ConfigError(f"{where}unknown key {key!r}")
        values[key] = _coerce(key, val, where)
    for key, val in (overrides or {}).items():
        values[key] = _coerce(key, val, "")
    try:
        _validate(values)
    except _Invalid as exc:
        raise ConfigError(f"{_line_of(text, exc.key)}{exc.message}") from None
    return ExperimentConfig(values)


def _coerce(key, val, where):
    if isinstance(val, dict):
        raise ConfigError(f"{where}{key!r}: tables are not allowed (the format is flat)")
    if key in LIST_KEYS:
        if not isinstance(val, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
            raise ConfigError(f"{where}{key!r} must be a list of numbers")
        return [int(x) if key in ("N_list", "loo_N_list") else float(x) for x in val]
    if key in STR_KEYS:
        if not isinstance(val, str):
            raise ConfigError(f"{where}{key!r} must be a string")
        return val
    if key in BOOL_KEYS:
        if not isinstance(val, bool):
            raise ConfigError(f"{where}{key!r} must be true or false")
        return val
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}{key!r} must be a number")
    if key in INT_KEYS:
        if isinstance(val, float) and not val.is_integer():
            raise ConfigError(f"{where}{key!r} must be an integer")
        return int(val)
    return float(val)


def _validate(v: dict):
    if v["dim"] not in (1, 2):
        raise _Invalid("dim", "dim must be 1 or 2")
    n = v["n"]
    if n < 16 or n & (n - 1):
        raise _Invalid("n", "n must be a power of two >= 16")
    if v["hamiltonian"] not in ("quadratic", "soft_linear"):
        raise _Invalid("hamiltonian", f"unknown hamiltonian {v['hamiltonian']!r}")
    if v["m0"] not in M0_KINDS:
        raise _Invalid("m0", f"m0 must be one of {M0_KINDS}")
    for key in POSITIVE:
        if not v[key] > 0:
            raise _Invalid(key, f"{key} must be positive")
    if v["strength"] < 0:
        raise _Invalid("strength", "strength must be nonnegative")
    if not 0 < v["eps"] < 0.5:
        raise _Invalid("eps", "eps must lie in (0, 0.5)")
    if not 0 < v["damping"] <= 1:
        raise _Invalid("damping", "damping must lie in (0, 1]")
    for key in ("N_list", "loo_N_list"):
        if any(N < 2 for N in v[key]):
            raise _Invalid(key, f"{key}: particle counts must be >= 2")
    for key in ("replicas", "paths", "store_every", "samples"):
        if v[key] < 1:
            raise _Invalid(key, f"{key} must be >= 1")
    if v["pairs"] < 1 or v["lipschitz_trials"] < 1:
        raise _Invalid("pairs" if v["pairs"] < 1 else "lipschitz_trials", "pairs and lipschitz_trials must be >= 1")


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, overrides)
