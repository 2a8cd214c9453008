"""Model checkpoints: one JSON document of named float64 arrays plus the run configuration."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
import pydantic
from pydantic import BaseModel
from pydantic import ConfigDict

from dmvcr.core.datamodel import Vocabulary
from dmvcr.core.exceptions import CheckpointError
from dmvcr.core.exceptions import ConfigurationError
from dmvcr.core.exceptions import ValidationError
from dmvcr.core.model import ModelParams
from dmvcr.core.model import initialize_params
from dmvcr.utils.settings import RunConfig
from dmvcr.utils.settings import validate_run_config

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ArrayRecord(BaseModel):
    """Shape and row-major values of one parameter."""

    model_config = ConfigDict(extra="forbid")

    shape: list[int]
    data: list[float]


class CheckpointDocument(BaseModel):
    """Top-level checkpoint layout."""

    model_config = ConfigDict(extra="forbid")

    format_version: int
    config: dict[str, Any]
    vocabulary: list[str]
    arrays: dict[str, ArrayRecord]


def save_checkpoint(params: ModelParams, config: RunConfig, path: Path) -> None:
    """Write parameters, vocabulary and configuration to ``path``.

    Floats are written in their shortest round-trip form, so loading is bit-exact.
    """
    document = CheckpointDocument(
        format_version=FORMAT_VERSION,
        config=config.model_dump(mode="json"),
        vocabulary=list(params.vocabulary.words),
        arrays={
            name: ArrayRecord(shape=list(tensor.shape), data=tensor.data.reshape(-1).tolist())
            for name, tensor in params.named_parameters().items()
        },
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document.model_dump(mode="json")) + "\n", encoding="utf-8")
    logger.info("Saved checkpoint with %d parameters to %s", params.num_parameters(), path)


def _read_document(path: Path) -> CheckpointDocument:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as error:
        message = f"Checkpoint not found: {path}"
        raise CheckpointError(message, cause=error) from error
    except json.JSONDecodeError as error:
        message = f"Checkpoint {path} is not valid JSON"
        raise CheckpointError(message, cause=error) from error
    if isinstance(raw, dict) and raw.get("format_version") != FORMAT_VERSION:
        message = (
            f"Checkpoint {path} has format version {raw.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
        raise CheckpointError(message)
    try:
        return CheckpointDocument.model_validate(raw)
    except pydantic.ValidationError as error:
        message = f"Checkpoint {path} is malformed: {error}"
        raise CheckpointError(message, cause=error) from error


def load_checkpoint(path: Path) -> tuple[ModelParams, RunConfig]:
    """Rebuild the parameters and configuration stored at ``path``.

    Raises:
        CheckpointError: If the file is missing, malformed, of another format
            version, or its arrays do not match the configuration.
    """
    document = _read_document(path)
    try:
        config = validate_run_config(document.config)
        vocabulary = Vocabulary(words=tuple(document.vocabulary))
    except (ConfigurationError, ValidationError) as error:
        message = f"Checkpoint {path}: {error.message}"
        raise CheckpointError(message, cause=error) from error

    params = initialize_params(vocabulary, config)
    expected = params.named_parameters()
    if set(expected) != set(document.arrays):
        missing = sorted(set(expected) - set(document.arrays))
        extra = sorted(set(document.arrays) - set(expected))
        message = f"Checkpoint {path}: missing arrays {missing}, unexpected arrays {extra}"
        raise CheckpointError(message)
    for name, tensor in expected.items():
        record = document.arrays[name]
        if tuple(record.shape) != tensor.shape or len(record.data) != tensor.data.size:
            message = (
                f"Checkpoint {path}: array {name} has shape {record.shape}, "
                f"configuration implies {list(tensor.shape)}"
            )
            raise CheckpointError(message)
        values = np.array(record.data, dtype=np.float64).reshape(tensor.shape)
        if not np.isfinite(values).all():
            message = f"Checkpoint {path}: array {name} holds non-finite values"
            raise CheckpointError(message)
        tensor.data[...] = values
    logger.debug("Loaded checkpoint %s", path)
    return params, config
