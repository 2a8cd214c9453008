"""Tests for configuration presets, validation and the per-user configuration file."""

from __future__ import annotations

from pathlib import Path

import pytest
from pytest_mock import MockerFixture

from dmvcr.core.datamodel import TaskKind
from dmvcr.core.exceptions import ConfigurationError
from dmvcr.utils.settings import PRESETS_PATH
from dmvcr.utils.settings import RunConfig
from dmvcr.utils.settings import apply_overrides
from dmvcr.utils.settings import dump_configuration
from dmvcr.utils.settings import load_configuration
from dmvcr.utils.settings import load_run_config
from dmvcr.utils.settings import resolve_config_path
from dmvcr.utils.settings import validate_run_config


@pytest.mark.parametrize("name", ["desk", "desk.json", "paper", "tiny.json"])
def test_bundled_presets_load(name: str) -> None:
    """Test every bundled preset validates."""
    assert isinstance(load_run_config(name), RunConfig)


def test_large_scale_preset_dimensions() -> None:
    """Test the large-scale preset carries its widths and rates."""
    config = load_run_config("paper")
    assert (config.word_dim, config.object_dim, config.encoder_dim) == (768, 512, 512)
    assert config.rationale_encoder_dim == 64
    assert config.dictionary_size == 800
    assert (config.lr_base, config.lr_dict) == (0.0002, 0.02)


def test_validation_interval(desk_config: RunConfig, tiny_config: RunConfig) -> None:
    """Test the desk preset validates every fifth epoch and the interval must be positive."""
    assert desk_config.validation_interval == 5
    assert tiny_config.validation_interval == 1
    with pytest.raises(ConfigurationError, match="validation_interval"):
        validate_run_config({"validation_interval": 0})


def test_resolve_config_path(temp_dir: Path) -> None:
    """Test existing files win over presets and unknown names fail."""
    custom = temp_dir / "desk.json"
    custom.write_text("{}", encoding="utf-8")

    assert resolve_config_path(custom) == custom
    assert resolve_config_path("desk") == PRESETS_PATH / "desk.json"
    with pytest.raises(ConfigurationError, match="not found"):
        resolve_config_path("nonexistent")


def test_invalid_fields_are_named() -> None:
    """Test validation errors name the offending fields."""
    with pytest.raises(ConfigurationError, match="word_dim"):
        validate_run_config({"word_dim": 0})
    with pytest.raises(ConfigurationError, match="unknown_knob"):
        validate_run_config({"unknown_knob": 1})
    with pytest.raises(ConfigurationError, match="object_dim"):
        validate_run_config({"object_dim": 2, "num_attributes": 3})


def test_yaml_configuration(temp_dir: Path) -> None:
    """Test YAML files are accepted alongside JSON."""
    path = temp_dir / "run.yaml"
    path.write_text("word_dim: 8\nepochs: 3\ntask_kind: rationale\n", encoding="utf-8")

    config = load_run_config(path)

    assert config.word_dim == 8
    assert config.epochs == 3
    assert config.task_kind is TaskKind.RATIONALE


def test_configuration_must_be_a_mapping(temp_dir: Path) -> None:
    """Test a list document is refused."""
    path = temp_dir / "run.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="mapping"):
        load_run_config(path)


def test_invalid_json_configuration(temp_dir: Path) -> None:
    """Test unparsable files are reported."""
    path = temp_dir / "run.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="not valid"):
        load_run_config(path)


def test_apply_overrides(tiny_config: RunConfig) -> None:
    """Test overrides replace values, skip None and are validated."""
    assert apply_overrides(tiny_config, seed=None) is tiny_config
    assert apply_overrides(tiny_config, seed=7, epochs=None).seed == 7
    with pytest.raises(ConfigurationError, match="epochs"):
        apply_overrides(tiny_config, epochs=-1)


def test_effective_encoder_dim(tiny_config: RunConfig) -> None:
    """Test rationale runs may use their own encoder width."""
    answering = tiny_config.model_copy(update={"rationale_encoder_dim": 2})
    rationale = answering.model_copy(update={"task_kind": TaskKind.RATIONALE})
    assert answering.effective_encoder_dim == tiny_config.encoder_dim
    assert rationale.effective_encoder_dim == 2
    unset = tiny_config.model_copy(update={"task_kind": TaskKind.RATIONALE})
    assert unset.effective_encoder_dim == tiny_config.encoder_dim


def test_load_configuration_generates_user_file(temp_dir: Path, mocker: MockerFixture) -> None:
    """Test a missing per-user file is generated from the desk preset."""
    user_path = temp_dir / "config" / "config.json"
    mocker.patch("dmvcr.utils.settings.get_config_path", return_value=user_path)

    generated = load_configuration()

    assert user_path.is_file()
    assert generated == load_run_config("desk")
    assert load_configuration() == generated


def test_load_configuration_from_path(temp_dir: Path, tiny_config: RunConfig) -> None:
    """Test an explicit path bypasses the per-user file."""
    path = dump_configuration(tiny_config, temp_dir / "tiny-copy.json")
    assert load_configuration(path) == tiny_config
