import json

import pytest

from hj_ks.config import config as config_module
from hj_ks.config.config import _apply_env_overrides, config, load_config, reload_config


def test_basic_env_override(monkeypatch):
    """Test basic environment variable override"""
    monkeypatch.setenv("KEY", "new_value")
    assert _apply_env_overrides({"key": "value"})["key"] == "new_value"


def test_nested_env_override(monkeypatch):
    """Test nested environment variable override"""
    monkeypatch.setenv("HJKS_RICCATI_DT", "0.01")
    result = _apply_env_overrides({"riccati": {"dt": 0.001}}, prefix="HJKS_")
    assert result["riccati"]["dt"] == 0.01


def test_type_conversion(monkeypatch):
    """Test type conversion in environment variables"""
    overrides = {"BOOL_VAL": "false", "INT_VAL": "100", "FLOAT_VAL": "2.71", "STR_VAL": "exact"}
    for key, value in overrides.items():
        monkeypatch.setenv(key, value)

    result = _apply_env_overrides({"bool_val": True, "int_val": 42, "float_val": 3.14, "str_val": "linear"})
    assert result["bool_val"] is False
    assert result["int_val"] == 100
    assert result["float_val"] == 2.71
    assert result["str_val"] == "exact"


def test_invalid_conversion_keeps_defaults(monkeypatch):
    """Test handling of invalid type conversions"""
    for key in ("BOOL_VAL", "INT_VAL", "FLOAT_VAL"):
        monkeypatch.setenv(key, "not_a_value")

    result = _apply_env_overrides({"bool_val": True, "int_val": 42, "float_val": 3.14})
    assert result == {"bool_val": True, "int_val": 42, "float_val": 3.14}


def test_empty_string_handling(monkeypatch):
    monkeypatch.setenv("STR_VAL", "")
    monkeypatch.setenv("INT_VAL", "")
    result = _apply_env_overrides({"str_val": "original", "int_val": 42})
    assert result["str_val"] == ""
    assert result["int_val"] == 42


def test_packaged_defaults():
    defaults = load_config()
    assert defaults["riccati"]["switch_threshold"] == 10.0
    assert defaults["quantum"]["time_interpolation"] == "exact"
    assert defaults["quantum"]["step_tolerance"] == 1e-8
    assert defaults["quantum"]["max_refinement"] == 16
    assert set(defaults) >= {"riccati", "kicked", "benettin", "quantum", "logging", "runner"}


def test_load_config_applies_prefixed_overrides(monkeypatch):
    monkeypatch.setenv("HJKS_QUANTUM_SUBSTEPS", "64")
    monkeypatch.setenv("HJKS_LOGGING_LOG_LEVEL", "DEBUG")
    loaded = load_config()
    assert loaded["quantum"]["substeps"] == 64
    assert loaded["logging"]["log_level"] == "DEBUG"


def test_load_config_missing_file(monkeypatch, tmp_path):
    monkeypatch.setattr(config_module, "config_path", lambda: str(tmp_path / "absent.json"))
    with pytest.raises(FileNotFoundError, match="Configuration file not found"):
        load_config()


def test_load_config_invalid_json(monkeypatch, tmp_path):
    broken = tmp_path / "config.json"
    broken.write_text("{ invalid json }")
    monkeypatch.setattr(config_module, "config_path", lambda: str(broken))
    with pytest.raises(json.JSONDecodeError):
        load_config()


def test_reload_config_updates_in_place(monkeypatch):
    before = id(config)
    monkeypatch.setenv("HJKS_RUNNER_MAX_WORKERS", "7")
    try:
        assert reload_config()["runner"]["max_workers"] == 7
        assert id(config) == before
        assert config["runner"]["max_workers"] == 7
    finally:
        monkeypatch.delenv("HJKS_RUNNER_MAX_WORKERS")
        reload_config()
    assert config["runner"]["max_workers"] == 4
