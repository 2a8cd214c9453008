"""Dependency injection container for the dmvcr application."""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

from dmvcr.utils.settings import RunConfig
from dmvcr.utils.settings import load_configuration
from dmvcr.utils.settings import load_run_config


class ConfigurationProvider(Protocol):
    """Protocol for configuration providers."""

    def get_configuration(self) -> RunConfig:
        """Get the run configuration."""
        ...


class FileConfigurationProvider:
    """Configuration provider that loads from file system."""

    def __init__(self, config_path: Path | None = None) -> None:
        """Initialize the configuration provider.

        Args:
            config_path: Optional path to configuration file. The per-user file
                is used when omitted.
        """
        self._config_path = config_path
        self._configuration: RunConfig | None = None

    def get_configuration(self) -> RunConfig:
        """Get the run configuration, loading it on first use."""
        if self._configuration is None:
            self._configuration = load_configuration(config_path=self._config_path)
        return self._configuration


class Container:
    """Dependency injection container."""

    def __init__(self, config_provider: ConfigurationProvider | None = None) -> None:
        """Initialize the container.

        Args:
            config_provider: Configuration provider to use.
        """
        self._config_provider = config_provider or FileConfigurationProvider()

    @property
    def configuration(self) -> RunConfig:
        """Get the default run configuration."""
        return self._config_provider.get_configuration()

    def resolve_configuration(self, config: str | Path | None = None) -> RunConfig:
        """Configuration named on the command line, or the default one.

        Args:
            config: File path or bundled preset name (``desk.json``, ``tiny``).
        """
        if config is None:
            return self.configuration
        return load_run_config(config)


# Default container instance
_default_container: Container | None = None


def get_container() -> Container:
    """Get the default container instance."""
    global _default_container  # noqa: PLW0603
    if _default_container is None:
        _default_container = Container()
    return _default_container


def set_container(container: Container | None) -> None:
    """Set the default container instance (``None`` resets to the file-based default)."""
    global _default_container  # noqa: PLW0603
    _default_container = container
