import logging
from typing import Annotated

import rich
import typer
from rich.console import Console
from rich.table import Table

from dmvcr.core.container import get_container
from dmvcr.core.gradcheck import run_gradient_suite
from dmvcr.core.validation import parse_seed_list

console = Console()

logger = logging.getLogger(__name__)

app = typer.Typer(no_args_is_help=True)

top_level_command_name = "gradcheck"


@app.command(name=top_level_command_name)
def gradcheck(
    *,
    config: Annotated[
        str | None,
        typer.Option("--config", "-c", help="Configuration supplying gradcheck_seeds."),
    ] = None,
    seeds: Annotated[
        str | None,
        typer.Option("--seeds", help="Comma-separated seeds, e.g. 1,2,3."),
    ] = None,
) -> None:
    """Compare every gradient rule with central finite differences."""
    run_config = get_container().resolve_configuration(config)
    seed_list = parse_seed_list(seeds) if seeds is not None else run_config.gradcheck_seeds

    with console.status(f"Checking gradients over {len(seed_list)} seeds..."):
        results = run_gradient_suite(seed_list)

    table = Table("operation", "max relative error", "threshold", "status")
    for result in results:
        status = "[green]ok[/green]" if result.passed else "[red]FAILED[/red]"
        table.add_row(result.name, f"{result.max_error:.3e}", f"{result.threshold:.0e}", status)
    rich.print(table)

    failures = [result.name for result in results if not result.passed]
    if failures:
        logger.error("Gradient check failed for: %s", ", ".join(failures))
        rich.print(f":x: [red]{len(failures)} operations exceed their threshold[/red]")
        raise typer.Exit(code=1)
    rich.print(":white_check_mark: [green]All gradients agree with finite differences[/green]")


if __name__ == "__main__":
    app()
