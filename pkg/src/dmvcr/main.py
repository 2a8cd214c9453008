import logging
from typing import Annotated

import typer

from dmvcr.cli_commands import ablate
from dmvcr.cli_commands import evaluate
from dmvcr.cli_commands import gen_data
from dmvcr.cli_commands import gradcheck
from dmvcr.cli_commands import report
from dmvcr.cli_commands import train
from dmvcr.core.exceptions import setup_exception_handler
from dmvcr.core.exceptions import setup_logging
from dmvcr.utils.helper_methods import lift_commands

logger = logging.getLogger(__name__)

# Configuration is resolved lazily by each command through the container
app = typer.Typer(no_args_is_help=True)


@app.callback()
def main(
    *,
    debug: Annotated[
        bool,
        typer.Option("--verbose", "-v", help="Enable debug mode"),
    ] = False,
) -> None:
    """Train and evaluate a multiple-choice visual reasoner with a dictionary working memory."""
    setup_logging(debug=debug)
    setup_exception_handler(debug=debug)

    if debug:
        logger.debug("Debug mode enabled!")


# Every command lives in its own typer app; lifting makes `dmvcr train` a top level
# command instead of `dmvcr train train`.
lift_commands(
    app,
    [
        (command_module.app, command_module.top_level_command_name)
        for command_module in (gen_data, train, evaluate, gradcheck, ablate, report)
    ],
)

if __name__ == "__main__":
    app()
