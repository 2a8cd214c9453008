"""Tests for the SVG reports."""

from __future__ import annotations

from datetime import datetime
from pathlib import Path
from xml.etree import ElementTree

import pytest
import pytz

from dmvcr.core.exceptions import ContractError
from dmvcr.core.training import LossRecord
from dmvcr.utils.plots import generation_comment
from dmvcr.utils.plots import loss_curves_svg
from dmvcr.utils.plots import metric_bars_svg
from dmvcr.utils.plots import write_svg

SVG = "{http://www.w3.org/2000/svg}"
FIXED_TIME = pytz.timezone("Europe/Warsaw").localize(datetime(2024, 1, 15, 13, 30, 0))


def _records(losses: list[float]) -> list[LossRecord]:
    return [
        LossRecord(epoch=1, batch=i, loss=value, val_qa_acc=None)
        for i, value in enumerate(losses, start=1)
    ]


def test_generation_comment_is_utc() -> None:
    """Test the timestamp is converted to UTC."""
    assert generation_comment(FIXED_TIME) == "<!-- generated 2024-01-15T12:30:00Z -->"


def test_loss_curves_svg() -> None:
    """Test one polyline and label per log."""
    document = loss_curves_svg(
        {"qa": _records([1.4, 1.0, 0.7]), "qar": _records([1.4, 1.2])}, now=FIXED_TIME
    )

    root = ElementTree.fromstring(document.encode("utf-8"))
    polylines = root.findall(f"{SVG}polyline")
    labels = [text.text for text in root.findall(f"{SVG}text")]

    assert len(polylines) == 2
    assert len(polylines[0].attrib["points"].split()) == 3
    assert "qa" in labels
    assert "qar" in labels
    assert "2024-01-15T12:30:00Z" in document


def test_loss_curves_svg_flat_log() -> None:
    """Test a constant loss still renders."""
    document = loss_curves_svg({"flat": _records([0.5])}, now=FIXED_TIME)
    assert "<polyline" in document


def test_loss_curves_svg_needs_data() -> None:
    """Test empty input is refused."""
    with pytest.raises(ContractError):
        loss_curves_svg({})
    with pytest.raises(ContractError):
        loss_curves_svg({"qa": []})


def test_metric_bars_svg(temp_dir: Path) -> None:
    """Test one bar per metric with its value printed."""
    document = metric_bars_svg({"Q→A": 0.75, "QA→R": 0.5, "Q→AR": 0.375}, now=FIXED_TIME)

    root = ElementTree.fromstring(document.encode("utf-8"))
    bars = root.findall(f"{SVG}rect")
    labels = [text.text for text in root.findall(f"{SVG}text")]

    assert len(bars) == 4  # background plus three bars
    assert "0.3750" in labels
    assert "Q→AR" in labels

    path = write_svg(document, temp_dir / "reports" / "metrics.svg")
    assert path.read_text(encoding="utf-8") == document


def test_metric_bars_svg_needs_data() -> None:
    """Test empty input is refused."""
    with pytest.raises(ContractError):
        metric_bars_svg({})
