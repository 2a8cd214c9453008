import logging
from pathlib import Path
from typing import Annotated

import rich
import typer

from dmvcr.core.container import get_container
from dmvcr.core.datamodel import TaskKind
from dmvcr.core.datamodel import build_vocab
from dmvcr.core.datamodel import generate_synthetic
from dmvcr.core.datamodel import save_dataset
from dmvcr.core.datamodel import save_vocabulary
from dmvcr.core.training import build_world
from dmvcr.core.validation import validate_output_path
from dmvcr.utils.settings import apply_overrides

logger = logging.getLogger(__name__)

app = typer.Typer(no_args_is_help=True)

top_level_command_name = "gen-data"


@app.command(name=top_level_command_name)
def gen_data(  # noqa: PLR0913
    *,
    out: Annotated[
        Path,
        typer.Option("--out", "-o", help="Where to write the JSON-lines dataset."),
    ],
    config: Annotated[
        str | None,
        typer.Option("--config", "-c", help="Configuration file or bundled preset name."),
    ] = None,
    n: Annotated[
        int | None,
        typer.Option("--n", min=1, help="Number of scenes (defaults to n_train)."),
    ] = None,
    seed: Annotated[
        int | None,
        typer.Option("--seed", min=0, envvar="DMVCR_SEED", help="Generation seed."),
    ] = None,
    kind: Annotated[
        TaskKind,
        typer.Option("--kind", help="Which subtask to generate."),
    ] = TaskKind.ANSWERING,
    noise: Annotated[
        float | None,
        typer.Option("--noise", min=0.0, help="Standard deviation of the feature noise."),
    ] = None,
    vocab_out: Annotated[
        Path | None,
        typer.Option("--vocab-out", help="Also write the vocabulary of the generated data."),
    ] = None,
) -> None:
    """Generate a synthetic multiple-choice dataset."""
    run_config = apply_overrides(
        get_container().resolve_configuration(config),
        seed=seed,
        noise=noise,
        task_kind=kind,
    )
    count = run_config.n_train if n is None else n
    output_path = validate_output_path(out)

    instances = generate_synthetic(build_world(run_config), count, run_config.seed, kind)
    save_dataset(instances, output_path)
    logger.info("Generated %d %s instances with seed %d", count, kind, run_config.seed)

    rich.print(f":sparkles: [green]Generated {count} {kind} instances[/green]")
    rich.print(f"[bold]{output_path}[/bold]")
    if vocab_out is not None:
        vocab_path = validate_output_path(vocab_out)
        save_vocabulary(build_vocab(instances, run_config.max_objects), vocab_path)
        rich.print(f"Vocabulary: [bold]{vocab_path}[/bold]")


if __name__ == "__main__":
    app()
