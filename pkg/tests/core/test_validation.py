"""Tests for validation utilities."""

from __future__ import annotations

from pathlib import Path

import pytest

from dmvcr.core.exceptions import ValidationError
from dmvcr.core.validation import parse_seed_list
from dmvcr.core.validation import sanitize_filename
from dmvcr.core.validation import validate_input_file
from dmvcr.core.validation import validate_output_path


def test_validate_input_file_valid(temp_dir: Path) -> None:
    """Test validation of an existing file."""
    test_file = temp_dir / "train.jsonl"
    test_file.write_text("{}\n")

    result = validate_input_file(test_file)
    assert result == test_file.resolve()


def test_validate_input_file_nonexistent() -> None:
    """Test validation fails for a missing file."""
    with pytest.raises(ValidationError, match="File does not exist"):
        validate_input_file("/nonexistent/path.jsonl")


def test_validate_input_file_directory(temp_dir: Path) -> None:
    """Test validation fails for a directory."""
    with pytest.raises(ValidationError, match="Not a file"):
        validate_input_file(temp_dir)


def test_validate_output_path_valid(temp_dir: Path) -> None:
    """Test a file that does not exist yet is a valid output."""
    result = validate_output_path(temp_dir / "runs" / "model.json")
    assert result == (temp_dir / "runs" / "model.json").resolve()


def test_validate_output_path_system_path() -> None:
    """Test validation refuses to write into system directories."""
    with pytest.raises(ValidationError, match="Unsafe output path"):
        validate_output_path("/etc/passwd")


def test_validate_output_path_directory(temp_dir: Path) -> None:
    """Test validation fails when the output is a directory."""
    with pytest.raises(ValidationError, match="Output path is a directory"):
        validate_output_path(temp_dir)


def test_parse_seed_list_valid() -> None:
    """Test parsing of a comma-separated seed list."""
    assert parse_seed_list("1, 2,3") == [1, 2, 3]
    assert parse_seed_list("7") == [7]


def test_parse_seed_list_empty() -> None:
    """Test an empty list is refused."""
    with pytest.raises(ValidationError, match="cannot be empty"):
        parse_seed_list(" , ")


def test_parse_seed_list_invalid() -> None:
    """Test negative or non-numeric seeds are refused."""
    with pytest.raises(ValidationError, match="Invalid seed"):
        parse_seed_list("1,x")
    with pytest.raises(ValidationError, match="Invalid seed"):
        parse_seed_list("-3")


def test_sanitize_filename_valid() -> None:
    """Test sanitization of valid filename."""
    result = sanitize_filename("loss_qa")
    assert result == "loss_qa"


def test_sanitize_filename_empty() -> None:
    """Test sanitization of empty filename."""
    assert sanitize_filename("") == "untitled"
    assert sanitize_filename(" .. ") == "untitled"


def test_sanitize_filename_invalid_characters() -> None:
    """Test sanitization removes invalid characters."""
    result = sanitize_filename("run<>1.csv")
    assert result == "run__1.csv"


def test_sanitize_filename_too_long() -> None:
    """Test sanitization truncates long filenames."""
    long_filename = "a" * 300 + ".csv"
    result = sanitize_filename(long_filename)
    assert len(result) <= 255
