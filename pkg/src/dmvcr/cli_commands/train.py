import logging
from pathlib import Path
from typing import Annotated

import rich
import typer
from rich.console import Console

from dmvcr.core.checkpoint import save_checkpoint
from dmvcr.core.container import get_container
from dmvcr.core.datamodel import TaskInstance
from dmvcr.core.datamodel import TaskKind
from dmvcr.core.datamodel import Vocabulary
from dmvcr.core.datamodel import build_vocab
from dmvcr.core.datamodel import load_dataset
from dmvcr.core.exceptions import ValidationError
from dmvcr.core.model import initialize_params
from dmvcr.core.training import accuracy
from dmvcr.core.training import synthetic_splits
from dmvcr.core.training import train as train_model
from dmvcr.core.validation import validate_input_file
from dmvcr.core.validation import validate_output_path
from dmvcr.utils.csv_logs import write_loss_log
from dmvcr.utils.settings import RunConfig
from dmvcr.utils.settings import apply_overrides

console = Console()

logger = logging.getLogger(__name__)

app = typer.Typer(no_args_is_help=True)

top_level_command_name = "train"

# At most one in this many instances of a lone training file is held out for validation.
HOLD_OUT_DIVISOR = 5


def _load_split(
    path: Path, kind: TaskKind, vocabulary: Vocabulary | None = None
) -> list[TaskInstance]:
    instances = load_dataset(validate_input_file(path), vocabulary)
    wrong = sum(instance.kind is not kind for instance in instances)
    if wrong:
        message = f"{path}: {wrong} instances are not {kind} instances"
        raise ValidationError(message)
    return instances


def _hold_out(
    instances: list[TaskInstance], n_val: int, path: Path
) -> tuple[list[TaskInstance], list[TaskInstance]]:
    held_out = min(n_val, len(instances) // HOLD_OUT_DIVISOR)
    if held_out < 1:
        message = (
            f"{path}: {len(instances)} instances are too few to hold out validation "
            f"(need at least {HOLD_OUT_DIVISOR}); pass --val"
        )
        raise ValidationError(message)
    return instances[:-held_out], instances[-held_out:]


def _datasets(run_config: RunConfig) -> tuple[list[TaskInstance], list[TaskInstance], Vocabulary]:
    """Training and validation instances plus the vocabulary built from the training ones.

    Without files both splits are generated together. A training file without a
    validation file gives up its last instances (at most ``n_val``, at most a
    fifth) for validation.
    """
    kind = run_config.task_kind
    validation: list[TaskInstance] = []
    val_source = str(run_config.val_path)
    if run_config.train_path is None:
        splits = synthetic_splits(run_config)
        train_set, train_source = splits.train, "generated"
        if run_config.val_path is None:
            validation, val_source = splits.validation, "generated"
    else:
        train_set = _load_split(run_config.train_path, kind)
        train_source = str(run_config.train_path)
        if run_config.val_path is None:
            train_set, validation = _hold_out(train_set, run_config.n_val, run_config.train_path)
            val_source = f"held out from {run_config.train_path}"
    vocabulary = build_vocab(train_set, run_config.max_objects)
    if run_config.val_path is not None:
        validation = _load_split(run_config.val_path, kind, vocabulary)
    logger.info(
        "Training instances: %d (%s); validation instances: %d (%s)",
        len(train_set),
        train_source,
        len(validation),
        val_source,
    )
    return train_set, validation, vocabulary


@app.command(name=top_level_command_name)
def train(  # noqa: PLR0913
    *,
    config: Annotated[
        str | None,
        typer.Option("--config", "-c", help="Configuration file or bundled preset name."),
    ] = None,
    kind: Annotated[
        TaskKind | None,
        typer.Option("--kind", help="Train the answering or the rationale model."),
    ] = None,
    train_path: Annotated[
        Path | None,
        typer.Option("--train", help="Training dataset (generated from the config if omitted)."),
    ] = None,
    val_path: Annotated[
        Path | None,
        typer.Option(
            "--val",
            help="Validation dataset (held out from --train, or generated, if omitted).",
        ),
    ] = None,
    out: Annotated[
        Path | None,
        typer.Option("--out", "-o", help="Checkpoint path."),
    ] = None,
    log: Annotated[
        Path | None,
        typer.Option("--log", help="Loss log CSV path."),
    ] = None,
    epochs: Annotated[int | None, typer.Option("--epochs", min=0)] = None,
    batch_size: Annotated[int | None, typer.Option("--batch-size", min=1)] = None,
    seed: Annotated[
        int | None,
        typer.Option("--seed", min=0, envvar="DMVCR_SEED", help="Run seed."),
    ] = None,
    lr_base: Annotated[
        float | None,
        typer.Option("--lr-base", min=0.0, help="Learning rate of every non-dictionary weight."),
    ] = None,
    lr_dict: Annotated[
        float | None,
        typer.Option("--lr-dict", min=0.0, help="Learning rate of the dictionary."),
    ] = None,
    dictionary: Annotated[
        bool | None,
        typer.Option("--dictionary/--no-dictionary", help="Use the working-memory dictionary."),
    ] = None,
) -> None:
    """Train the answering or rationale model and write a checkpoint and a loss log."""
    run_config = apply_overrides(
        get_container().resolve_configuration(config),
        task_kind=kind,
        train_path=train_path,
        val_path=val_path,
        checkpoint_path=out,
        log_path=log,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        lr_base=lr_base,
        lr_dict=lr_dict,
        dictionary_enabled=dictionary,
    )
    task = run_config.task_kind
    checkpoint_path = validate_output_path(
        run_config.checkpoint_path or run_config.output_dir / f"{task}.json"
    )
    log_path = validate_output_path(
        run_config.log_path or run_config.output_dir / f"{task}_loss.csv"
    )

    train_set, validation, vocabulary = _datasets(run_config)
    params = initialize_params(vocabulary, run_config)
    logger.info(
        "Training %s model: %d parameters, %d training and %d validation instances",
        task,
        params.num_parameters(),
        len(train_set),
        len(validation),
    )
    with console.status(f"Training the {task} model for {run_config.epochs} epochs..."):
        training_log = train_model(params, train_set, run_config, validation)

    save_checkpoint(params, run_config, checkpoint_path)
    write_loss_log(training_log.records, log_path)

    rich.print(":white_check_mark: [green]Training finished![/green]")
    if training_log.epoch_losses:
        rich.print(f"Final mean loss: [bold]{training_log.epoch_losses[-1]:.6f}[/bold]")
    rich.print(f"Training accuracy: [bold]{accuracy(params, train_set):.4f}[/bold]")
    rich.print(f"Validation accuracy: [bold]{accuracy(params, validation):.4f}[/bold]")
    rich.print(f"Checkpoint: [bold]{checkpoint_path}[/bold]")
    rich.print(f"Loss log: [bold]{log_path}[/bold]")


if __name__ == "__main__":
    app()
