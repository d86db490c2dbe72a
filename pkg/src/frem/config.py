"""YAML run-configuration loading and validation.

One file configures one experiment.  Common keys:

    model:   {name: ou | hmm2d | cir, params: {...}}   (required)
    seed:    nonnegative integer                        (default 0)
    threads: worker count for replicate-level parallelism (default 1)
    out:     output directory                           (default "out")

plus one section per subcommand (``simulate``, ``bridge``, ``frem``,
``bench``) holding that command's parameters.  Command-line flags override
``seed``, ``threads`` and ``out``.  All validation problems raise
:class:`ConfigError`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        raise ConfigError(f"could not parse {path}: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return cfg


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return cfg[key]


def _as_int(value, key: str, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _as_float(value, key: str, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    value = float(value)
    if positive and value <= 0:
        raise ConfigError(f"{key} must be positive, got {value}")
    return value


def _as_vector(value, key: str):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.array([float(value)])
    if isinstance(value, (list, tuple)) and value and all(
            isinstance(v, (int, float)) and not isinstance(v, bool)
            for v in value):
        return np.asarray(value, dtype=float)
    raise ConfigError(f"{key} must be a number or a list of numbers")


def model_section(cfg: dict) -> tuple[str, dict]:
    section = _require(cfg, "model", "config")
    if not isinstance(section, dict):
        raise ConfigError("model section must be a mapping")
    name = _require(section, "name", "model")
    params = section.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("model.params must be a mapping")
    return str(name), dict(params)


def common_options(cfg: dict, seed=None, threads=None, out=None):
    """Resolve (seed, threads, out_dir) with CLI overrides applied."""
    seed = seed if seed is not None else cfg.get("seed", 0)
    threads = threads if threads is not None else cfg.get("threads", 1)
    out = out if out is not None else cfg.get("out", "out")
    seed = _as_int(seed, "seed", minimum=0)
    threads = _as_int(threads, "threads", minimum=1)
    return seed, threads, Path(out)


def command_section(cfg: dict, command: str) -> dict:
    section = _require(cfg, command, "config")
    if not isinstance(section, dict):
        raise ConfigError(f"{command} section must be a mapping")
    return section
