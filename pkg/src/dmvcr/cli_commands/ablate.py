import logging
from pathlib import Path
from typing import Annotated

import rich
import typer
from rich.console import Console
from rich.table import Table

from dmvcr.core.container import get_container
from dmvcr.core.training import run_ablation
from dmvcr.core.validation import parse_seed_list
from dmvcr.core.validation import validate_output_path
from dmvcr.utils.csv_logs import format_fraction
from dmvcr.utils.csv_logs import write_ablation

console = Console()

logger = logging.getLogger(__name__)

app = typer.Typer(no_args_is_help=True)

top_level_command_name = "ablate"


@app.command(name=top_level_command_name)
def ablate(
    *,
    config: Annotated[
        str | None,
        typer.Option("--config", "-c", help="Configuration file or bundled preset name."),
    ] = None,
    seeds: Annotated[
        str | None,
        typer.Option("--seeds", help="Comma-separated seeds (defaults to ablation_seeds)."),
    ] = None,
    out: Annotated[
        Path | None,
        typer.Option("--out", "-o", help="Ablation CSV path."),
    ] = None,
) -> None:
    """Train dictionary on/off twins per seed and compare validation Q→A accuracy."""
    run_config = get_container().resolve_configuration(config)
    seed_list = parse_seed_list(seeds) if seeds is not None else run_config.ablation_seeds
    output_path = validate_output_path(out or run_config.output_dir / "ablation.csv")

    with console.status(f"Training {2 * len(seed_list)} twins..."):
        report = run_ablation(run_config, seed_list)
    write_ablation(report, output_path)

    table = Table("seed", "with dictionary", "without dictionary", "gap", title="Ablation")
    for row in report.rows:
        table.add_row(
            str(row.seed),
            format_fraction(row.with_dictionary),
            format_fraction(row.without_dictionary),
            format_fraction(row.gap),
        )
    table.add_row(
        "mean",
        format_fraction(report.mean_with_dictionary),
        format_fraction(report.mean_without_dictionary),
        format_fraction(report.mean_gap),
    )
    rich.print(table)
    rich.print(f"Ablation table: [bold]{output_path}[/bold]")


if __name__ == "__main__":
    app()
