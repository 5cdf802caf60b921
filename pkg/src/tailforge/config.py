"""Run configuration: one JSON file per run.

Layout::

    {
      "seed": 20240611,
      "workers": 1,
      "model": {
        "a": {"family": "TwoPointSigned", "u": 2, "v": 0.5, "p_hi": 0.05, "sign_prob": 0.5},
        "b": {"law": "ConstantB", "c": 1},
        "n_children": 2
      },
      "profile": {"gamma_margin": null, "delta": null},
      "ldcheck": {"n": [100, 400, 1600], "d_over_sqrt_n": [0, 0.5, 1]},
      "vncheck": {"log_t": [10, 20, 30, 40], "C0": null, "delta": null, "samples": 100000},
      "fixpoint": {"pool_size": 1000000, "t_grid": {"start": 1, "stop": 1000, "num": 31}},
      "certify": {"log_t": 20, "pool_size": 1000000}
    }

Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from pathlib import Path

import numpy as np

from tailforge.errors import ConfigError
from tailforge.weights import ConstantB, GaussianB, GaussianLogSigned, TwoPointSigned, WeightModel

log = logging.getLogger(__name__)

SEED_ENV = "TAILFORGE_SEED"
MC_COMMANDS = {"fixpoint", "certify"}

A_FAMILIES = {"TwoPointSigned": TwoPointSigned, "GaussianLogSigned": GaussianLogSigned}
B_LAWS = {"ConstantB": ConstantB, "GaussianB": GaussianB}

SECTION_DEFAULTS = {
    "profile": {"gamma_margin": None, "delta": None},
    "analyze": {},
    "ldcheck": {"n": [100, 400, 1600], "d_over_sqrt_n": [0.0, 0.5, 1.0]},
    "vncheck": {"log_t": [10.0, 20.0, 30.0, 40.0], "C0": None, "delta": None, "samples": 100_000},
    "fixpoint": {
        "pool_size": 1_000_000,
        "t_grid": {"start": 1.0, "stop": 1000.0, "num": 31},
        "min_rounds": 50,
        "max_rounds": 1000,
        "extra_rounds": 0,
        "resume": None,
        "hill_k": None,
    },
    "certify": {
        "log_t": 20.0,
        "pool_size": 1_000_000,
        "C1": None,
        "C0": None,
        "d": None,
        "delta": None,
        "delta0": None,
        "eps": None,
        "tail_samples": 200_000,
        "vn_samples": 100_000,
        "pool": None,
    },
}
TOP_KEYS = {"seed", "workers", "model", *SECTION_DEFAULTS}


def _build(table: dict, kind: str, field: str, spec: dict):
    spec = dict(spec)
    name = spec.pop(field, None)
    if name not in table:
        raise ConfigError(f"model.{kind}.{field} must be one of {sorted(table)}, got {name!r}")
    if kind == "b" and name == "GaussianB" and "mean" in spec:
        spec["mean_"] = spec.pop("mean")
    try:
        return table[name](**spec)
    except TypeError as exc:
        raise ConfigError(f"model.{kind}: {exc}") from None


def model_from_dict(spec: dict) -> WeightModel:
    if not isinstance(spec, dict) or "a" not in spec:
        raise ConfigError("model section needs an 'a' law")
    extra = set(spec) - {"a", "b", "n_children"}
    if extra:
        raise ConfigError(f"unknown model keys: {sorted(extra)}")
    a = _build(A_FAMILIES, "a", "family", spec["a"])
    b = _build(B_LAWS, "b", "law", spec.get("b", {"law": "ConstantB", "c": 1.0}))
    n = spec.get("n_children", 2)
    if not isinstance(n, int) or n < 2:
        raise ConfigError("model.n_children must be an integer >= 2")
    return WeightModel(a, b, n)


def t_grid_from(spec) -> list[float]:
    """A list of t values, or ``{"start", "stop", "num"}`` for a log-spaced grid."""
    if isinstance(spec, dict):
        try:
            grid = np.logspace(math.log10(spec["start"]), math.log10(spec["stop"]), int(spec["num"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad t_grid: {exc}") from None
        return [float(t) for t in grid]
    if isinstance(spec, list) and spec and all(isinstance(t, (int, float)) and t > 0 for t in spec):
        return [float(t) for t in spec]
    raise ConfigError("t_grid must be a nonempty list of positive numbers or a start/stop/num table")


def _merge_section(name: str, given) -> dict:
    base = copy.deepcopy(SECTION_DEFAULTS[name])
    if given is None:
        return base
    if not isinstance(given, dict):
        raise ConfigError(f"section {name!r} must be a table")
    extra = set(given) - set(base)
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
    base.update(given)
    return base


def _check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    return seed


def resolve(raw: dict, command: str, workers=None, env=None) -> dict:
    """Validate a parsed config and fill every default; the result is echoed in outputs."""
    env = os.environ if env is None else env
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(raw) - TOP_KEYS
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    if "model" not in raw:
        raise ConfigError("config needs a model section")
    model_from_dict(raw["model"])
    out = {"model": copy.deepcopy(raw["model"])}
    seed = raw.get("seed")
    if env.get(SEED_ENV):
        try:
            env_seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
        log.info("seed overridden by %s: %s -> %d", SEED_ENV, seed, env_seed)
        seed = env_seed
    if seed is None and command in MC_COMMANDS:
        raise ConfigError(f"command {command!r} draws random numbers and needs a seed")
    out["seed"] = None if seed is None else _check_seed(seed)
    w = workers if workers is not None else raw.get("workers", 1)
    if w != "auto" and (isinstance(w, bool) or not isinstance(w, int) or w < 1):
        raise ConfigError("workers must be a positive integer or 'auto'")
    out["workers"] = w
    for name in SECTION_DEFAULTS:
        out[name] = _merge_section(name, raw.get(name))
    return out


def load(path, command: str, workers=None, env=None) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return resolve(raw, command, workers, env)
