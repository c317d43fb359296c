"""
Tests for run configuration resolution and seeding
"""

import json

import pytest

from hidden_order_hmm.config import (
    ModelSettings,
    SchemaConfig,
    load_config_file,
    resolve_run_config,
    resolve_seed,
    resolve_settings,
    task_seed,
)
from hidden_order_hmm.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    for name in ("HIDDEN_ORDER_SEED", "HIDDEN_ORDER_OUTPUT_DIR", "HIDDEN_ORDER_WORKERS"):
        monkeypatch.delenv(name, raising=False)
    # keep a stray .env in the working directory out of the tests
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def inputs(fixtures_dir):
    return {
        "transactions": str(fixtures_dir / "small_tape.csv"),
        "calendar": str(fixtures_dir / "calendar.json"),
    }


def write_config(tmp_path, payload) -> str:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_task_seed_is_stable_and_distinct():
    assert task_seed(0, "M001", 2004) == task_seed(0, "M001", 2004)
    seeds = {task_seed(0, "M001", 2004), task_seed(0, "M001", 2005), task_seed(0, "M002", 2004),
             task_seed(1, "M001", 2004), task_seed(0, "M001")}
    assert len(seeds) == 5


def test_flags_override_file_values(tmp_path, inputs):
    path = write_config(tmp_path, {"inputs": inputs, "seed": 5, "model": {"restarts": 3}})
    config = resolve_run_config({"seed": 9, "model": {"restarts": None, "tolerance": 1e-4}}, path)
    assert config.seed == 9
    assert config.model.restarts == 3
    assert config.model.tolerance == 1e-4
    assert config.model.num_states == 3


def test_environment_is_the_fallback(monkeypatch, tmp_path, inputs):
    monkeypatch.setenv("HIDDEN_ORDER_SEED", "11")
    monkeypatch.setenv("HIDDEN_ORDER_WORKERS", "4")
    config = resolve_run_config({"inputs": inputs})
    assert (config.seed, config.workers) == (11, 4)
    path = write_config(tmp_path, {"inputs": inputs, "seed": 2})
    assert resolve_run_config(config_path=path).seed == 2


def test_invalid_values_raise_config_error(inputs):
    with pytest.raises(ConfigError):
        resolve_run_config({"inputs": inputs, "workers": 0})
    with pytest.raises(ConfigError):
        resolve_run_config({"inputs": {**inputs, "calendar": "missing.json"}})
    with pytest.raises(ConfigError):
        resolve_run_config({"inputs": inputs, "run_id": "../elsewhere"})
    with pytest.raises(ConfigError):
        resolve_run_config({"inputs": inputs, "model": {"unknown": 1}})


def test_hash_ignores_the_output_location(inputs):
    first = resolve_run_config({"inputs": inputs, "output_dir": "a"})
    second = resolve_run_config({"inputs": inputs, "output_dir": "b", "run_id": "named"})
    assert first.config_hash() == second.config_hash()
    assert first.resolved_run_id() == f"run-{first.config_hash()[:12]}"
    assert second.run_dir().name == "named"
    assert resolve_run_config({"inputs": inputs, "seed": 1}).config_hash() != first.config_hash()


def test_resolve_settings_reads_one_section(tmp_path):
    path = write_config(tmp_path, {"model": {"restarts": 4, "decoder": "viterbi"}})
    settings = resolve_settings(ModelSettings, path, "model", {"restarts": 6, "decoder": None})
    assert (settings.restarts, settings.decoder) == (6, "viterbi")
    assert resolve_settings(SchemaConfig, None, "tape_schema").timezone == "UTC"
    with pytest.raises(ConfigError):
        resolve_settings(ModelSettings, path, "model", {"max_sojourn": 1})


def test_resolve_seed_precedence(monkeypatch, tmp_path):
    path = write_config(tmp_path, {"seed": 3})
    monkeypatch.setenv("HIDDEN_ORDER_SEED", "8")
    assert resolve_seed(1, path) == 1
    assert resolve_seed(None, path) == 3
    assert resolve_seed(None, None) == 8
    monkeypatch.delenv("HIDDEN_ORDER_SEED")
    assert resolve_seed(None, None) == 0


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.json")
    (tmp_path / "list.json").write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "list.json")
    (tmp_path / "broken.json").write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "broken.json")
