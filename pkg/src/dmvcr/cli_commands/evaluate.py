import logging
from pathlib import Path
from typing import Annotated

import rich
import typer
from rich.table import Table

from dmvcr.core.checkpoint import load_checkpoint
from dmvcr.core.container import get_container
from dmvcr.core.datamodel import TaskInstance
from dmvcr.core.datamodel import TaskKind
from dmvcr.core.datamodel import generate_synthetic
from dmvcr.core.datamodel import load_dataset
from dmvcr.core.datamodel import pair_scenes
from dmvcr.core.training import EVALUATION_SEED_OFFSET
from dmvcr.core.training import build_world
from dmvcr.core.training import evaluate as evaluate_models
from dmvcr.core.validation import validate_input_file
from dmvcr.core.validation import validate_output_path
from dmvcr.utils.csv_logs import format_fraction
from dmvcr.utils.csv_logs import write_metrics
from dmvcr.utils.settings import RunConfig
from dmvcr.utils.settings import apply_overrides

logger = logging.getLogger(__name__)

app = typer.Typer(no_args_is_help=True)

top_level_command_name = "eval"


def _generated_pairs(run_config: RunConfig) -> list[tuple[TaskInstance, TaskInstance]]:
    world = build_world(run_config)
    seed = run_config.seed + EVALUATION_SEED_OFFSET
    answering = generate_synthetic(world, run_config.n_eval, seed, TaskKind.ANSWERING)
    rationale = generate_synthetic(world, run_config.n_eval, seed, TaskKind.RATIONALE)
    return pair_scenes(answering, rationale)


@app.command(name=top_level_command_name)
def evaluate(  # noqa: PLR0913
    *,
    qa_checkpoint: Annotated[
        Path,
        typer.Option("--qa-checkpoint", help="Checkpoint of the answering model."),
    ],
    qar_checkpoint: Annotated[
        Path,
        typer.Option("--qar-checkpoint", help="Checkpoint of the rationale model."),
    ],
    answering: Annotated[
        Path | None,
        typer.Option("--answering", help="Answering instances, one per scene."),
    ] = None,
    rationale: Annotated[
        Path | None,
        typer.Option("--rationale", help="Rationale instances in the same scene order."),
    ] = None,
    out: Annotated[
        Path | None,
        typer.Option("--out", "-o", help="Metrics CSV path."),
    ] = None,
    config: Annotated[
        str | None,
        typer.Option(
            "--config",
            "-c",
            help="Configuration used to generate evaluation scenes "
            "(defaults to the answering checkpoint's).",
        ),
    ] = None,
    seed: Annotated[
        int | None,
        typer.Option("--seed", min=0, envvar="DMVCR_SEED", help="Seed of the generated scenes."),
    ] = None,
) -> None:
    """Evaluate Q→A, QA→R and the joined Q→AR accuracy."""
    params_qa, qa_config = load_checkpoint(validate_input_file(qa_checkpoint))
    params_qar, _ = load_checkpoint(validate_input_file(qar_checkpoint))
    base_config = qa_config if config is None else get_container().resolve_configuration(config)
    run_config = apply_overrides(base_config, seed=seed)

    if (answering is None) != (rationale is None):
        message = "Give both --answering and --rationale, or neither"
        raise typer.BadParameter(message)
    if answering is not None and rationale is not None:
        pairs = pair_scenes(
            load_dataset(validate_input_file(answering), params_qa.vocabulary),
            load_dataset(validate_input_file(rationale), params_qar.vocabulary),
        )
    else:
        pairs = _generated_pairs(run_config)

    metrics = evaluate_models(params_qa, params_qar, pairs)
    output_path = validate_output_path(out or run_config.output_dir / "metrics.csv")
    write_metrics(metrics, output_path)

    table = Table("Q→A", "QA→R", "Q→AR", title=f"Evaluation over {len(pairs)} scenes")
    table.add_row(
        format_fraction(metrics.qa_accuracy),
        format_fraction(metrics.qar_accuracy),
        format_fraction(metrics.joint_accuracy),
    )
    rich.print(table)
    rich.print(f"Metrics: [bold]{output_path}[/bold]")


if __name__ == "__main__":
    app()
