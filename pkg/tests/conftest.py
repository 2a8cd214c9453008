"""Pytest configuration and fixtures."""

from __future__ import annotations

import tempfile
from collections.abc import Generator
from pathlib import Path

import pytest

from dmvcr.core.container import Container
from dmvcr.core.container import set_container
from dmvcr.core.datamodel import SyntheticWorld
from dmvcr.core.datamodel import TaskInstance
from dmvcr.core.datamodel import TaskKind
from dmvcr.core.datamodel import build_vocab
from dmvcr.core.datamodel import generate_synthetic
from dmvcr.core.model import ModelParams
from dmvcr.core.model import initialize_params
from dmvcr.core.training import build_world
from dmvcr.utils.settings import RunConfig
from dmvcr.utils.settings import load_run_config


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield Path(temp_dir)


@pytest.fixture
def tiny_config() -> RunConfig:
    """The bundled tiny preset."""
    return load_run_config("tiny")


@pytest.fixture
def desk_config() -> RunConfig:
    """The bundled desk preset."""
    return load_run_config("desk")


@pytest.fixture
def test_config(tiny_config: RunConfig, temp_dir: Path) -> RunConfig:
    """Tiny configuration writing its artifacts into the temporary directory."""
    return tiny_config.model_copy(update={"output_dir": temp_dir / "runs"})


@pytest.fixture
def test_container(test_config: RunConfig) -> Generator[Container, None, None]:
    """Create a test container with mocked configuration."""

    class TestConfigProvider:
        def get_configuration(self) -> RunConfig:
            return test_config

    container = Container(config_provider=TestConfigProvider())
    from dmvcr.core import container as container_module

    original_container = container_module._default_container
    try:
        set_container(container)
        yield container
    finally:
        set_container(original_container)


@pytest.fixture
def world(tiny_config: RunConfig) -> SyntheticWorld:
    """Synthetic world of the tiny preset."""
    return build_world(tiny_config)


@pytest.fixture
def answering_instances(world: SyntheticWorld) -> list[TaskInstance]:
    """A handful of answering instances."""
    return generate_synthetic(world, 8, seed=3, kind=TaskKind.ANSWERING)


@pytest.fixture
def rationale_instances(world: SyntheticWorld) -> list[TaskInstance]:
    """Rationale instances describing the same scenes as ``answering_instances``."""
    return generate_synthetic(world, 8, seed=3, kind=TaskKind.RATIONALE)


@pytest.fixture
def tiny_params(tiny_config: RunConfig, answering_instances: list[TaskInstance]) -> ModelParams:
    """Freshly initialised tiny model over the answering vocabulary."""
    vocabulary = build_vocab(answering_instances, tiny_config.max_objects)
    return initialize_params(vocabulary, tiny_config)
