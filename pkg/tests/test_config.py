from pathlib import Path

import numpy as np
import pytest

from frem.config import (_as_float, _as_int, _as_vector, command_section,
                         common_options, load_config, model_section)
from frem.errors import ConfigError


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_config_roundtrip(tmp_path):
    p = write(tmp_path, "model:\n  name: ou\n  params: {dt: 0.1}\nseed: 4\n")
    cfg = load_config(p)
    assert cfg["seed"] == 4
    assert model_section(cfg) == ("ou", {"dt": 0.1})


def test_load_config_failures(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = write(tmp_path, "model: [unclosed\n", name="bad.yaml")
    with pytest.raises(ConfigError):
        load_config(bad)
    flat = write(tmp_path, "- a\n- b\n", name="flat.yaml")
    with pytest.raises(ConfigError):
        load_config(flat)


def test_int_coercion():
    assert _as_int(5, "k") == 5
    assert _as_int(0, "k", minimum=0) == 0
    for bad in (True, 2.5, "3", None):
        with pytest.raises(ConfigError):
            _as_int(bad, "k")
    with pytest.raises(ConfigError):
        _as_int(1, "k", minimum=2)


def test_float_coercion():
    assert _as_float(2, "x") == 2.0
    assert _as_float(0.25, "x", positive=True) == 0.25
    for bad in (True, "0.5", None):
        with pytest.raises(ConfigError):
            _as_float(bad, "x")
    with pytest.raises(ConfigError):
        _as_float(0.0, "x", positive=True)
    with pytest.raises(ConfigError):
        _as_float(-1.0, "x", positive=True)


def test_vector_coercion():
    np.testing.assert_array_equal(_as_vector(1.5, "v"), [1.5])
    np.testing.assert_array_equal(_as_vector([1, 2.5], "v"), [1.0, 2.5])
    for bad in (None, [], [True], ["a"], [1.0, None], "1.0"):
        with pytest.raises(ConfigError):
            _as_vector(bad, "v")


def test_model_section_validation():
    with pytest.raises(ConfigError):
        model_section({})
    with pytest.raises(ConfigError):
        model_section({"model": "ou"})
    with pytest.raises(ConfigError):
        model_section({"model": {"params": {}}})
    with pytest.raises(ConfigError):
        model_section({"model": {"name": "ou", "params": [1]}})
    assert model_section({"model": {"name": "ou"}}) == ("ou", {})


def test_common_options_defaults_and_overrides():
    assert common_options({}) == (0, 1, Path("out"))
    cfg = {"seed": 9, "threads": 2, "out": "results"}
    assert common_options(cfg) == (9, 2, Path("results"))
    # command-line values win over the file
    assert common_options(cfg, seed=1, threads=4, out="o2") == (1, 4,
                                                                Path("o2"))
    with pytest.raises(ConfigError):
        common_options({"seed": -1})
    with pytest.raises(ConfigError):
        common_options({"threads": 0})
    with pytest.raises(ConfigError):
        common_options({"seed": "x"})


def test_command_section():
    cfg = {"bench": {"sizes": [10]}}
    assert command_section(cfg, "bench") == {"sizes": [10]}
    with pytest.raises(ConfigError):
        command_section(cfg, "simulate")
    with pytest.raises(ConfigError):
        command_section({"simulate": 3}, "simulate")
