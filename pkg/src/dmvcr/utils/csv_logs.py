"""CSV artifacts: loss logs, metric rows and ablation tables."""

import csv
import logging
from collections.abc import Iterable
from pathlib import Path

from dmvcr.core.exceptions import DatasetParseError
from dmvcr.core.training import AblationReport
from dmvcr.core.training import LossRecord
from dmvcr.core.training import Metrics

logger = logging.getLogger(__name__)

LOSS_LOG_HEADER = ("epoch", "batch", "loss", "val_qa_acc")
METRICS_HEADER = ("qa", "qar", "joint")
ABLATION_HEADER = ("seed", "with_dictionary", "without_dictionary", "gap")


def format_fraction(value: float) -> str:
    """Fractions are reported with four decimals."""
    return f"{value:.4f}"


def write_loss_log(records: Iterable[LossRecord], path: Path) -> None:
    """Write ``epoch,batch,loss,val_qa_acc`` rows; losses keep full precision."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(LOSS_LOG_HEADER)
        for record in records:
            accuracy = "" if record.val_qa_acc is None else format_fraction(record.val_qa_acc)
            writer.writerow((record.epoch, record.batch, repr(record.loss), accuracy))


def read_loss_log(path: Path) -> list[LossRecord]:
    """Read a loss log written by :func:`write_loss_log`.

    Raises:
        DatasetParseError: If the header or a row is malformed.
    """
    with path.open(encoding="utf-8", newline="") as file:
        reader = csv.reader(file)
        header = next(reader, None)
        if tuple(header or ()) != LOSS_LOG_HEADER:
            message = f"{path}: expected header {','.join(LOSS_LOG_HEADER)}, got {header}"
            raise DatasetParseError(message)
        records = []
        for line_number, row in enumerate(reader, start=2):
            try:
                epoch, batch, loss, accuracy = row
                records.append(
                    LossRecord(
                        epoch=int(epoch),
                        batch=int(batch),
                        loss=float(loss),
                        val_qa_acc=float(accuracy) if accuracy else None,
                    )
                )
            except ValueError as error:
                message = f"{path}: line {line_number}: malformed loss record {row}"
                raise DatasetParseError(message, cause=error) from error
    return records


def write_metrics(metrics: Metrics, path: Path) -> None:
    """Write the ``qa,qar,joint`` header and one row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        writer.writerow(
            format_fraction(value)
            for value in (metrics.qa_accuracy, metrics.qar_accuracy, metrics.joint_accuracy)
        )


def read_metrics(path: Path) -> dict[str, float]:
    """Read the single metrics row keyed by column name.

    Raises:
        DatasetParseError: If the file is not a metrics CSV.
    """
    with path.open(encoding="utf-8", newline="") as file:
        rows = list(csv.DictReader(file))
    if len(rows) != 1 or tuple(rows[0]) != METRICS_HEADER:
        message = f"{path}: expected a {','.join(METRICS_HEADER)} header and one row"
        raise DatasetParseError(message)
    try:
        return {key: float(value) for key, value in rows[0].items()}
    except ValueError as error:
        message = f"{path}: non-numeric metric in {rows[0]}"
        raise DatasetParseError(message, cause=error) from error


def write_ablation(report: AblationReport, path: Path) -> None:
    """One row per seed and a closing ``mean`` row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(ABLATION_HEADER)
        for row in report.rows:
            writer.writerow(
                (
                    row.seed,
                    format_fraction(row.with_dictionary),
                    format_fraction(row.without_dictionary),
                    format_fraction(row.gap),
                )
            )
        writer.writerow(
            (
                "mean",
                format_fraction(report.mean_with_dictionary),
                format_fraction(report.mean_without_dictionary),
                format_fraction(report.mean_gap),
            )
        )
    logger.debug("Wrote ablation table with %d seeds to %s", len(report.rows), path)
