"""Plain SVG reports: loss curves from training logs and bars for evaluation metrics."""

import logging
from collections.abc import Mapping
from collections.abc import Sequence
from datetime import datetime
from pathlib import Path
from xml.sax.saxutils import escape

import pytz

from dmvcr.core.exceptions import ContractError
from dmvcr.core.training import LossRecord

logger = logging.getLogger(__name__)

WIDTH = 640
HEIGHT = 400
MARGIN = 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


def generation_comment(now: datetime | None = None) -> str:
    """SVG comment carrying the UTC generation time."""
    now = datetime.now(tz=pytz.utc) if now is None else now.astimezone(pytz.utc)
    return f"<!-- generated {now.strftime(TIMESTAMP_FORMAT)} -->"


def _document(body: list[str], title: str, now: datetime | None) -> str:
    return "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            generation_comment(now),
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:g}" y="24" text-anchor="middle" font-size="16">'
            f"{escape(title)}</text>",
            *body,
            "</svg>",
            "",
        ]
    )


def _axes(y_low: float, y_high: float, x_label: str, y_label: str) -> list[str]:
    left, bottom, right, top = MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN
    return [
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>',
        f'<text x="{left - 6}" y="{bottom}" text-anchor="end" font-size="11">{y_low:.3g}</text>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end" font-size="11">{y_high:.3g}</text>',
        f'<text x="{(left + right) / 2:g}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-size="12">{escape(x_label)}</text>',
        f'<text x="14" y="{(top + bottom) / 2:g}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {(top + bottom) / 2:g})">{escape(y_label)}</text>',
    ]


def loss_curves_svg(
    logs: Mapping[str, Sequence[LossRecord]],
    *,
    now: datetime | None = None,
) -> str:
    """One polyline of batch losses per named log.

    Raises:
        ContractError: If there is no log or a log is empty.
    """
    if not logs or any(not records for records in logs.values()):
        message = "loss_curves_svg needs at least one non-empty log"
        raise ContractError(message)
    values = [record.loss for records in logs.values() for record in records]
    low, high = min(values), max(values)
    span = high - low or 1.0
    longest = max(len(records) for records in logs.values())
    plot_width = WIDTH - 2 * MARGIN
    plot_height = HEIGHT - 2 * MARGIN

    body = _axes(low, high, "batch", "loss")
    for position, (name, records) in enumerate(logs.items()):
        colour = PALETTE[position % len(PALETTE)]
        points = " ".join(
            f"{MARGIN + plot_width * step / max(longest - 1, 1):.2f},"
            f"{HEIGHT - MARGIN - plot_height * (record.loss - low) / span:.2f}"
            for step, record in enumerate(records)
        )
        body.append(
            f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{points}"/>'
        )
        body.append(
            f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 16 * (position + 1)}" text-anchor="end" '
            f'font-size="12" fill="{colour}">{escape(name)}</text>'
        )
    return _document(body, "Training loss", now)


def metric_bars_svg(metrics: Mapping[str, float], *, now: datetime | None = None) -> str:
    """Bars for fractions in [0, 1] (Q→A, QA→R, Q→AR).

    Raises:
        ContractError: If ``metrics`` is empty.
    """
    if not metrics:
        message = "metric_bars_svg needs at least one metric"
        raise ContractError(message)
    plot_width = WIDTH - 2 * MARGIN
    plot_height = HEIGHT - 2 * MARGIN
    slot = plot_width / len(metrics)
    body = _axes(0.0, 1.0, "metric", "accuracy")
    for position, (name, value) in enumerate(metrics.items()):
        height = plot_height * min(max(value, 0.0), 1.0)
        x = MARGIN + slot * position + slot * 0.15
        y = HEIGHT - MARGIN - height
        colour = PALETTE[position % len(PALETTE)]
        body.extend(
            [
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{slot * 0.7:.2f}" height="{height:.2f}" '
                f'fill="{colour}"/>',
                f'<text x="{x + slot * 0.35:.2f}" y="{y - 6:.2f}" text-anchor="middle" '
                f'font-size="12">{value:.4f}</text>',
                f'<text x="{x + slot * 0.35:.2f}" y="{HEIGHT - MARGIN + 16}" '
                f'text-anchor="middle" font-size="12">{escape(name)}</text>',
            ]
        )
    return _document(body, "Evaluation metrics", now)


def write_svg(document: str, path: Path) -> Path:
    """Write an SVG document, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document, encoding="utf-8")
    logger.debug("Wrote %s", path)
    return path
