import json
import logging
from pathlib import Path
from typing import Annotated
from typing import Any
from typing import Self

import yaml
from annotated_types import Ge
from annotated_types import Gt
from annotated_types import Le
from platformdirs import user_config_dir
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import PlainSerializer
from pydantic import ValidationError as PydanticValidationError
from pydantic import model_validator

from dmvcr.core.datamodel import DEFAULT_MAX_OBJECTS
from dmvcr.core.datamodel import DEFAULT_MAX_SEQ_LEN
from dmvcr.core.datamodel import MAX_FILLERS
from dmvcr.core.datamodel import NUM_CHOICES
from dmvcr.core.datamodel import TaskKind
from dmvcr.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

APP_NAME = "dmvcr"

PRESETS_PATH = Path(__file__).resolve().parent.parent / "config"
DEFAULT_PRESET = "desk.json"

# Longest synthetic sequence: question, tag, fillers, separator and a three-token answer.
LONGEST_SYNTHETIC_QUERY = 2 + MAX_FILLERS + 1 + 3

StringSerializedPath = Annotated[Path, PlainSerializer(lambda x: str(x), return_type=str)]
Dimension = Annotated[int, Ge(1)]
LearningRate = Annotated[float, Ge(0)]


class RunConfig(BaseModel):
    """Every knob of a run: dimensions, synthetic world, optimisation, flags and paths.

    Attributes:
        word_dim: Token embedding width d_w.
        object_dim: Object feature width d_o.
        hidden_dim: Per-direction BiLSTM hidden size d_h.
        encoder_dim: Encoder hidden size d_e; the dictionary entries share it.
        rationale_encoder_dim: Optional d_e used instead for rationale runs.
        dictionary_size: Number of dictionary entries k.
        mlp_dim: Hidden width of the prediction head.
        lr_base: Adam learning rate for every parameter except the dictionary.
        lr_dict: Adam learning rate for the dictionary.
        dictionary_enabled: When false the dictionary readout is replaced by zeros.
        literal_encoder_input: Feed fq twice to the encoder instead of fq then fr.
        zero_head_init: Start the head's output layer at zero (uniform predictions).
        validation_interval: Measure validation accuracy every this many epochs
            (and always after the last one).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    word_dim: Dimension = 32
    object_dim: Dimension = 16
    hidden_dim: Dimension = 32
    encoder_dim: Dimension = 64
    rationale_encoder_dim: Dimension | None = None
    dictionary_size: Dimension = 64
    mlp_dim: Dimension = 64
    max_objects: Annotated[int, Ge(2)] = DEFAULT_MAX_OBJECTS
    max_seq_len: Dimension = DEFAULT_MAX_SEQ_LEN

    num_attributes: Dimension = 6
    num_relations: Dimension = 4
    noise: Annotated[float, Ge(0)] = 0.0
    world_seed: Annotated[int, Ge(0)] = 0
    n_train: Dimension = 200
    n_val: Dimension = 50
    n_eval: Dimension = 200

    lr_base: LearningRate = 0.01
    lr_dict: LearningRate = 0.02
    beta1: Annotated[float, Ge(0), Le(1)] = 0.9
    beta2: Annotated[float, Ge(0), Le(1)] = 0.999
    adam_eps: Annotated[float, Gt(0)] = 1e-8
    epochs: Annotated[int, Ge(0)] = 50
    batch_size: Dimension = 16
    seed: Annotated[int, Ge(0)] = 0
    divergence_factor: Annotated[float, Gt(1)] = 10.0
    validation_interval: Dimension = 1

    dictionary_enabled: bool = True
    literal_encoder_input: bool = False
    zero_head_init: bool = True
    task_kind: TaskKind = TaskKind.ANSWERING

    ablation_seeds: list[Annotated[int, Ge(0)]] = [1, 2, 3, 4, 5]
    gradcheck_seeds: list[Annotated[int, Ge(0)]] = [1, 2, 3, 4, 5]

    train_path: StringSerializedPath | None = None
    val_path: StringSerializedPath | None = None
    checkpoint_path: StringSerializedPath | None = None
    log_path: StringSerializedPath | None = None
    output_dir: StringSerializedPath = Path("runs")

    @model_validator(mode="after")
    def _check_consistency(self) -> Self:
        if self.object_dim < self.num_attributes:
            message = (
                f"object_dim ({self.object_dim}) must be at least num_attributes "
                f"({self.num_attributes}) to one-hot encode attributes"
            )
            raise ValueError(message)
        if self.num_attributes * self.num_relations < NUM_CHOICES:
            message = "num_attributes * num_relations must be at least 4"
            raise ValueError(message)
        if self.max_seq_len < LONGEST_SYNTHETIC_QUERY:
            message = f"max_seq_len must be at least {LONGEST_SYNTHETIC_QUERY}"
            raise ValueError(message)
        return self

    @property
    def effective_encoder_dim(self) -> int:
        """Encoder hidden size for this run's task kind."""
        if self.task_kind is TaskKind.RATIONALE and self.rationale_encoder_dim is not None:
            return self.rationale_encoder_dim
        return self.encoder_dim


def _format_validation_error(error: PydanticValidationError) -> str:
    problems = []
    for detail in error.errors():
        field = ".".join(str(part) for part in detail["loc"]) or "config"
        problems.append(f"{field}: {detail['msg']}")
    return "; ".join(problems)


def validate_run_config(data: dict[str, Any]) -> RunConfig:
    """Validate raw configuration data.

    Raises:
        ConfigurationError: Naming every offending field.
    """
    try:
        return RunConfig.model_validate(data)
    except PydanticValidationError as error:
        message = f"Invalid configuration: {_format_validation_error(error)}"
        raise ConfigurationError(message, cause=error) from error


def _log_yaml(dictionary: dict[str, Any]) -> None:
    config_yaml = yaml.dump(dictionary, default_flow_style=False)
    logger.debug("YAML configuration:\n%s", config_yaml)


def _read_mapping(file_path: Path) -> dict[str, Any]:
    try:
        with file_path.open(encoding="utf-8") as file:
            if file_path.suffix in {".yaml", ".yml"}:
                data = yaml.safe_load(stream=file)
            else:
                data = json.load(file)
    except FileNotFoundError as error:
        message = f"Configuration file not found: {file_path}"
        raise ConfigurationError(message, cause=error) from error
    except (json.JSONDecodeError, yaml.YAMLError) as error:
        message = f"Configuration file {file_path} is not valid JSON/YAML"
        raise ConfigurationError(message, cause=error) from error
    if not isinstance(data, dict):
        message = f"Configuration file {file_path} must hold a mapping"
        raise ConfigurationError(message)
    return data


def resolve_config_path(name_or_path: str | Path) -> Path:
    """Find a configuration file: an existing path first, then a bundled preset.

    ``desk.json``, ``desk`` and ``paper`` all name bundled presets.

    Raises:
        ConfigurationError: If nothing matches.
    """
    candidate = Path(name_or_path)
    if candidate.is_file():
        return candidate
    for preset in (PRESETS_PATH / candidate.name, PRESETS_PATH / f"{candidate.name}.json"):
        if preset.is_file():
            return preset
    available = ", ".join(sorted(path.name for path in PRESETS_PATH.glob("*.json")))
    message = f"Configuration {name_or_path} not found (bundled presets: {available})"
    raise ConfigurationError(message)


def load_run_config(name_or_path: str | Path) -> RunConfig:
    """Load and validate a configuration file or bundled preset."""
    file_path = resolve_config_path(name_or_path)
    logger.debug("Loading configuration from %s", file_path)
    data = _read_mapping(file_path)
    config = validate_run_config(data)
    _log_yaml(config.model_dump(mode="json"))
    return config


def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:  # noqa: ANN401
    """Return ``config`` with the given keys replaced; ``None`` values are ignored.

    Raises:
        ConfigurationError: If the result does not validate.
    """
    given = {key: value for key, value in overrides.items() if value is not None}
    if not given:
        return config
    logger.debug("Configuration overrides: %s", given)
    return validate_run_config({**config.model_dump(), **given})


def get_config_path() -> Path:
    """Returns the path to the per-user configuration file.

    Returns:
        Path: ``config.json`` inside the user configuration directory.
    """
    return (Path(user_config_dir(appname=APP_NAME)) / "config.json").resolve()


def dump_configuration(configuration: RunConfig, file_path: Path | None = None) -> Path:
    """Write ``configuration`` as JSON (to the per-user location by default)."""
    file_path = get_config_path() if file_path is None else file_path
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_text(configuration.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return file_path


def load_configuration(config_path: Path | None = None) -> RunConfig:
    """Loads the configuration from a file.

    Without a path the per-user file is used; if it is missing it is generated
    from the desk preset and saved.

    Returns:
        RunConfig: The loaded or default configuration.
    """
    if config_path is not None:
        return load_run_config(config_path)
    user_path = get_config_path()
    if user_path.is_file():
        return load_run_config(user_path)
    logger.info("Configuration file not found under %s. Generating one from defaults", user_path)
    default_configuration = load_run_config(PRESETS_PATH / DEFAULT_PRESET)
    dump_configuration(configuration=default_configuration, file_path=user_path)
    return default_configuration
