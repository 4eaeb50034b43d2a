"""Experiment configuration files: strict parsing and schema validation.

Configs are TOML with an explicit schema_version, the experiment name, a
seed, an output directory, and a [params] table whose keys are whitelisted
per experiment.  Anything unknown is rejected so a typo cannot silently run
a default.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:       # 3.10 fallback
    import tomli as tomllib

from .errors import ConfigError

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "experiment", "seed", "output_dir", "params"}

# Whitelisted parameters and their defaults; the default value also fixes the
# expected type (ints are accepted where a float is expected, never the
# reverse, and bools are never accepted as numbers).
PARAM_DEFAULTS = {
    "zonal_sup": {
        "mode": "zonal",            # zonal | highest_weight
        "l_list": [20, 28, 40, 57, 80, 113, 160, 226, 320, 400],
        "grid_density": 0,          # 0 = library default
        "include_equator": True,
        "enforce": True,
    },
    "beam_restriction": {
        "h_list": [1e-2, 3.16e-3, 1e-3, 1e-4],
        "angles_deg": [90.0, 45.0],
        "enforce": True,
    },
    "torus_average": {
        "m_list": [[0, 7], [3, 5], [0, 1], [2, 0], [5, 2]],
        "density": 256,
        "enforce": True,
    },
    "sphere_returns": {
        "density": 24,
        "bins": 8,
        "enforce": True,
    },
    "cover_partition": {
        "base_point": [0.137, 0.358],
        "n_balls": 64,
        "samples_per_ball": 48,
        "T_list": [5.0, 10.0, 20.0],
        "S_list": [10.0, 100.0, 1000.0],
        "N_list": [17, 33, 65],
        "T_hor": 80.0,
        "enforce": True,
    },
    "catmap_contraction": {
        "matrix": [[2, 1], [1, 1]],
        "resolution": 11,           # grid side 2^resolution
        "t0": 2,
        "T": 16,
        "eps": 0.05,
        "center": [0.13, 0.29],
        "half_stable": 0.05,
        "half_unstable": 0.02,
        "sweep_T_list": [4, 6, 9, 13],
        "sweep_half_stable": 0.0125,
        "sweep_half_unstable": 0.002,
        "alpha": 0.4,
        "bracket_R": 0.03125,
        "bracket_tau": 1.0,
        "enforce": True,
    },
    "tube_mass": {
        "parts": ["single", "cover", "aligned"],
        "single_base": [0.31, 0.47],
        "single_angle": 1.0,
        "single_R": 0.03,
        "single_tau": 0.03,
        "single_h": 1e-6,
        "single_delta": 0.45,
        "single_window": [0.2, 2.0],
        "cover_m": [0, 160],
        "cover_N": 2048,
        "cover_R": 0.1,
        "cover_tau": 0.45,
        "cover_delta": 0.75,
        "cover_density": 10,
        "aligned_m": [0, 160],
        "aligned_N": 2048,
        "aligned_R": 0.1,
        "aligned_tau": 0.05,
        "aligned_delta": 0.6,
        "aligned_window": [0.45, 0.55],
        "alpha": 0.4,
        "dump_field": True,
        "enforce": True,
    },
    "conjugacy": {
        "t_max": 20.0,
        "decay_rate": 1.0,
        "cert_T": 5.0,
        "n_directions": 8,
        "enforce": True,
    },
    "mu_thicken": {
        "n_liouville": 524288,
        "liouville_deltas": [0.4, 0.2, 0.1],
        "liouville_prox": 0.01,
        "liouville_density": 200,
        "curve_x2": 0.25,
        "orbit_x1": 0.37,
        "orbit_n": 2048,
        "orbit_density": 4000,
        "orbit_deltas": [0.4, 0.2, 0.1],
        "orbit_prox": 0.0005,
        "enforce": True,
    },
}

EXPERIMENT_NAMES = tuple(sorted(PARAM_DEFAULTS))


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    output_dir: str
    params: dict
    schema_version: int = SCHEMA_VERSION
    source_sha256: str = ""
    path: str = ""
    warnings: list = field(default_factory=list)


def _type_name(v) -> str:
    return type(v).__name__


def _check_value(name: str, value, template):
    """Validate value against the template's shape; returns the coerced value."""
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean, got {_type_name(value)}")
        return value
    if isinstance(template, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {_type_name(value)}")
        return value
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {_type_name(value)}")
        return float(value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {_type_name(value)}")
        return value
    if isinstance(template, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {_type_name(value)}")
        if len(value) == 0:
            raise ConfigError(f"{name}: list must not be empty")
        elem = template[0]
        return [_check_value(f"{name}[{i}]", v, elem) for i, v in enumerate(value)]
    raise ConfigError(f"{name}: unsupported parameter shape")


def validate_tree(tree: dict, path: str = "", source_sha256: str = "") -> ExperimentConfig:
    """Validate an already parsed configuration tree."""
    if not isinstance(tree, dict):
        raise ConfigError("configuration root must be a table")
    unknown = sorted(set(tree) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    if "schema_version" not in tree:
        raise ConfigError("missing schema_version")
    sv = tree["schema_version"]
    if sv != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {sv!r}; this build reads {SCHEMA_VERSION}")
    if "experiment" not in tree:
        raise ConfigError("missing experiment name")
    name = tree["experiment"]
    if name not in PARAM_DEFAULTS:
        raise ConfigError(
            f"unknown experiment {name!r}; known: {', '.join(EXPERIMENT_NAMES)}")
    if "output_dir" not in tree or not isinstance(tree["output_dir"], str) \
            or not tree["output_dir"]:
        raise ConfigError("output_dir must be a non-empty string")
    seed = tree.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    defaults = PARAM_DEFAULTS[name]
    given = tree.get("params", {})
    if not isinstance(given, dict):
        raise ConfigError("params must be a table")
    bad = sorted(set(given) - set(defaults))
    if bad:
        raise ConfigError(f"unknown parameters for {name}: {', '.join(bad)}")
    params = copy.deepcopy(defaults)
    for k, v in given.items():
        params[k] = _check_value(f"params.{k}", v, defaults[k])

    return ExperimentConfig(name, seed, tree["output_dir"], params,
                            SCHEMA_VERSION, source_sha256, path)


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a TOML experiment configuration file."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    try:
        tree = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    digest = hashlib.sha256(raw).hexdigest()
    return validate_tree(tree, path=str(path), source_sha256=digest)
