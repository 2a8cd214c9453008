import logging
from pathlib import Path
from typing import Annotated

import rich
import typer

from dmvcr.core.exceptions import ValidationError
from dmvcr.core.validation import sanitize_filename
from dmvcr.core.validation import validate_input_file
from dmvcr.utils.csv_logs import read_loss_log
from dmvcr.utils.csv_logs import read_metrics
from dmvcr.utils.plots import loss_curves_svg
from dmvcr.utils.plots import metric_bars_svg
from dmvcr.utils.plots import write_svg

logger = logging.getLogger(__name__)

app = typer.Typer(no_args_is_help=True)

top_level_command_name = "report"

METRIC_LABELS = {"qa": "Q→A", "qar": "QA→R", "joint": "Q→AR"}


@app.command(name=top_level_command_name)
def report(
    *,
    log: Annotated[
        list[Path] | None,
        typer.Option("--log", help="Loss log CSV; repeat for several curves."),
    ] = None,
    metrics: Annotated[
        Path | None,
        typer.Option("--metrics", help="Metrics CSV written by eval."),
    ] = None,
    out_dir: Annotated[
        Path,
        typer.Option("--out-dir", "-o", help="Directory for the SVG files."),
    ] = Path("reports"),
) -> None:
    """Render loss curves and metric bars as SVG."""
    if not log and metrics is None:
        message = "Nothing to report: give at least one --log or --metrics"
        raise ValidationError(message)

    written = []
    if log:
        logs = {
            sanitize_filename(path.stem): read_loss_log(validate_input_file(path)) for path in log
        }
        written.append(write_svg(loss_curves_svg(logs), out_dir / "loss_curves.svg"))
    if metrics is not None:
        values = read_metrics(validate_input_file(metrics))
        labelled = {METRIC_LABELS.get(key, key): value for key, value in values.items()}
        written.append(write_svg(metric_bars_svg(labelled), out_dir / "metrics.svg"))

    logger.info("Wrote %d report files to %s", len(written), out_dir)
    rich.print(":bar_chart: [green]Report written![/green]")
    for path in written:
        rich.print(f"[bold]{path.resolve()}[/bold]")


if __name__ == "__main__":
    app()
