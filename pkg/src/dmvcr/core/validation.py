"""Validation of command-line inputs: paths, seed lists and file names."""

from __future__ import annotations

import re
from pathlib import Path

from dmvcr.core.exceptions import ValidationError

MAX_FILENAME_LENGTH = 255
_UNSAFE_PREFIXES = ("/etc", "/proc", "/sys")


def validate_input_file(path: str | Path) -> Path:
    """Validate a file the command is going to read.

    Args:
        path: The file path to validate.

    Returns:
        Resolved path.

    Raises:
        ValidationError: If the path does not name an existing regular file.
    """
    try:
        file_path = Path(path).resolve()
    except (OSError, ValueError) as e:
        message = f"Invalid file path: {path}"
        raise ValidationError(message) from e

    if not file_path.exists():
        message = f"File does not exist: {path}"
        raise ValidationError(message)
    if not file_path.is_file():
        message = f"Not a file: {path}"
        raise ValidationError(message)
    return file_path


def validate_output_path(path: str | Path) -> Path:
    """Validate a file the command is going to write.

    Raises:
        ValidationError: If the path points into a system directory or at a directory.
    """
    if str(path).startswith(_UNSAFE_PREFIXES):
        message = f"Unsafe output path: {path}"
        raise ValidationError(message)
    file_path = Path(path).resolve()
    if file_path.is_dir():
        message = f"Output path is a directory: {path}"
        raise ValidationError(message)
    return file_path


def parse_seed_list(text: str) -> list[int]:
    """Parse a comma-separated list of non-negative seeds, e.g. ``"1,2,3"``.

    Raises:
        ValidationError: If the list is empty or holds anything but non-negative integers.
    """
    parts = [part.strip() for part in text.split(",") if part.strip()]
    if not parts:
        message = "Seed list cannot be empty"
        raise ValidationError(message)
    seeds = []
    for part in parts:
        if not part.isdigit():
            message = f"Invalid seed {part!r}: seeds are non-negative integers"
            raise ValidationError(message)
        seeds.append(int(part))
    return seeds


def sanitize_filename(filename: str) -> str:
    """Sanitize a filename for safe file system usage.

    Args:
        filename: The filename to sanitize.

    Returns:
        Sanitized filename.
    """
    if not filename:
        return "untitled"

    sanitized = re.sub(r'[<>:"/\\|?*\x00-\x1f]', "_", filename)
    sanitized = sanitized.strip(" .")

    if not sanitized:
        return "untitled"

    return sanitized[:MAX_FILENAME_LENGTH]
