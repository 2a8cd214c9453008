"""Mini-batch training, accuracy, joined Q→AR evaluation and the dictionary ablation."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from dmvcr.core.datamodel import SyntheticWorld
from dmvcr.core.datamodel import TaskInstance
from dmvcr.core.datamodel import TaskKind
from dmvcr.core.datamodel import build_vocab
from dmvcr.core.datamodel import generate_synthetic
from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DivergenceError
from dmvcr.core.model import ModelParams
from dmvcr.core.model import initialize_params
from dmvcr.core.model import loss
from dmvcr.core.model import predict
from dmvcr.core.numerics import backward
from dmvcr.core.numerics import scale
from dmvcr.core.optim import AdamState
from dmvcr.core.optim import adam_step
from dmvcr.core.optim import learning_rates

if TYPE_CHECKING:
    from dmvcr.utils.settings import RunConfig

logger = logging.getLogger(__name__)

# Offsets added to the run seed for each generated split.
TRAIN_SEED_OFFSET = 0
VALIDATION_SEED_OFFSET = 1
EVALUATION_SEED_OFFSET = 2


# DATA


def build_world(config: RunConfig) -> SyntheticWorld:
    """Synthetic world described by ``config``."""
    return SyntheticWorld.create(
        num_attributes=config.num_attributes,
        num_relations=config.num_relations,
        noise=config.noise,
        feature_dim=config.object_dim,
        max_objects=config.max_objects,
        seed=config.world_seed,
    )


@dataclass(frozen=True)
class DataSplits:
    """Generated training and validation instances of one task kind."""

    train: list[TaskInstance]
    validation: list[TaskInstance]


def synthetic_splits(config: RunConfig, kind: TaskKind | None = None) -> DataSplits:
    """Generate the training and validation splits for ``config``."""
    kind = config.task_kind if kind is None else kind
    world = build_world(config)
    return DataSplits(
        train=generate_synthetic(world, config.n_train, config.seed + TRAIN_SEED_OFFSET, kind),
        validation=generate_synthetic(
            world, config.n_val, config.seed + VALIDATION_SEED_OFFSET, kind
        ),
    )


# ACCURACY


def correctness_flags(params: ModelParams, instances: Sequence[TaskInstance]) -> list[bool]:
    """Whether the predicted candidate is the gold one, per instance in order."""
    return [predict(params, instance).choice == instance.gold for instance in instances]


def accuracy(params: ModelParams, instances: Sequence[TaskInstance]) -> float:
    """Fraction of instances predicted correctly.

    Raises:
        ContractError: If ``instances`` is empty.
    """
    if not instances:
        message = "accuracy needs at least one instance"
        raise ContractError(message)
    flags = correctness_flags(params, instances)
    return sum(flags) / len(flags)


# TRAINING


@dataclass(frozen=True)
class LossRecord:
    """One row of the loss log.

    ``val_qa_acc`` is the validation accuracy at the end of the epoch, ``None``
    for epochs that skipped validation.
    """

    epoch: int
    batch: int
    loss: float
    val_qa_acc: float | None


@dataclass(frozen=True)
class TrainingLog:
    """Per-batch records and the mean training loss of every epoch."""

    records: tuple[LossRecord, ...]
    epoch_losses: tuple[float, ...]

    @property
    def losses(self) -> list[float]:
        """Batch losses in training order."""
        return [record.loss for record in self.records]


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[start : start + batch_size] for start in range(0, len(order), batch_size)]


def _validates(epoch: int, epochs: int, interval: int) -> bool:
    return epoch % interval == 0 or epoch == epochs


def train_batch(
    params: ModelParams,
    batch: Sequence[TaskInstance],
    state: AdamState,
    lr_groups: dict[str, float],
) -> list[float]:
    """Accumulate the mean-loss gradient over ``batch`` in order and take one Adam step.

    Returns:
        list[float]: Loss of each instance before the step.
    """
    factor = 1.0 / len(batch)
    losses = []
    for instance in batch:
        instance_loss = loss(params, instance)
        losses.append(instance_loss.item())
        backward(scale(instance_loss, factor))
    adam_step(params, None, state, lr_groups)
    return losses


def train(
    params: ModelParams,
    dataset: Sequence[TaskInstance],
    config: RunConfig,
    validation: Sequence[TaskInstance] | None = None,
    *,
    state: AdamState | None = None,
) -> TrainingLog:
    """Train ``params`` in place.

    Each epoch visits the dataset in a seeded random order in mini-batches of
    ``config.batch_size``. The dictionary trains at ``lr_dict`` and every other
    parameter at ``lr_base``.

    Args:
        params: Parameters to update.
        dataset: Training instances.
        config: Run configuration (epochs, batch size, rates, seed, divergence factor).
        validation: Held-out instances whose accuracy is logged every
            ``validation_interval`` epochs and after the last one.
        state: Optimizer state to continue from; fresh when omitted.

    Returns:
        TrainingLog: One record per batch plus the epoch mean losses.

    Raises:
        ContractError: If ``dataset`` is empty.
        DivergenceError: If an epoch's mean loss exceeds ``divergence_factor``
            times the first batch loss.
    """
    if not dataset:
        message = "train needs a non-empty dataset"
        raise ContractError(message)
    state = AdamState.from_config(config) if state is None else state
    lr_groups = learning_rates(config)
    rng = np.random.default_rng(config.seed)
    records: list[LossRecord] = []
    epoch_losses: list[float] = []
    initial_loss: float | None = None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        epoch_batches: list[tuple[int, float]] = []
        instance_losses: list[float] = []
        for batch_number, indices in enumerate(_batches(order, config.batch_size), start=1):
            losses = train_batch(params, [dataset[i] for i in indices], state, lr_groups)
            batch_loss = math.fsum(losses) / len(losses)
            if initial_loss is None:
                initial_loss = batch_loss
            epoch_batches.append((batch_number, batch_loss))
            instance_losses.extend(losses)

        epoch_loss = math.fsum(instance_losses) / len(instance_losses)
        epoch_losses.append(epoch_loss)
        val_accuracy = (
            accuracy(params, validation)
            if validation and _validates(epoch, config.epochs, config.validation_interval)
            else None
        )
        records.extend(
            LossRecord(epoch=epoch, batch=number, loss=value, val_qa_acc=val_accuracy)
            for number, value in epoch_batches
        )
        logger.info(
            "Epoch %d/%d: mean loss %.6f%s",
            epoch,
            config.epochs,
            epoch_loss,
            "" if val_accuracy is None else f", validation accuracy {val_accuracy:.4f}",
        )
        if initial_loss is not None and epoch_loss > config.divergence_factor * initial_loss:
            message = (
                f"Training diverged at epoch {epoch}: mean loss {epoch_loss:.6g} exceeds "
                f"{config.divergence_factor:g} times the initial loss {initial_loss:.6g} "
                f"(lr_base={config.lr_base}, lr_dict={config.lr_dict})"
            )
            logger.error(message)
            raise DivergenceError(message)

    return TrainingLog(records=tuple(records), epoch_losses=tuple(epoch_losses))


# EVALUATION


@dataclass(frozen=True)
class Metrics:
    """Q→A, QA→R and joined Q→AR accuracy with per-scene correctness flags."""

    qa_accuracy: float
    qar_accuracy: float
    joint_accuracy: float
    qa_flags: tuple[bool, ...]
    qar_flags: tuple[bool, ...]
    joint_flags: tuple[bool, ...]


def join_metrics(qa_flags: Sequence[bool], qar_flags: Sequence[bool]) -> Metrics:
    """Join per-scene answer and rationale correctness; a scene counts only if both hold.

    Raises:
        ContractError: If the flag lists are empty or of different lengths.
    """
    if len(qa_flags) != len(qar_flags):
        message = f"{len(qa_flags)} answer flags but {len(qar_flags)} rationale flags"
        raise ContractError(message)
    if not qa_flags:
        message = "join_metrics needs at least one scene"
        raise ContractError(message)
    joint = tuple(bool(a and r) for a, r in zip(qa_flags, qar_flags, strict=True))
    count = len(joint)
    return Metrics(
        qa_accuracy=sum(map(bool, qa_flags)) / count,
        qar_accuracy=sum(map(bool, qar_flags)) / count,
        joint_accuracy=sum(joint) / count,
        qa_flags=tuple(map(bool, qa_flags)),
        qar_flags=tuple(map(bool, qar_flags)),
        joint_flags=joint,
    )


def evaluate(
    params_qa: ModelParams,
    params_qar: ModelParams,
    dataset_pairs: Sequence[tuple[TaskInstance, TaskInstance]],
) -> Metrics:
    """Score paired answering/rationale instances with their respective models.

    Raises:
        ContractError: If a pair is not (answering, rationale) over the same scene.
    """
    for position, (qa, qar) in enumerate(dataset_pairs):
        if qa.kind is not TaskKind.ANSWERING or qar.kind is not TaskKind.RATIONALE:
            message = f"Pair {position} is not an (answering, rationale) pair"
            raise ContractError(message)
        if qa.objects != qar.objects:
            message = f"Pair {position} mixes two different scenes"
            raise ContractError(message)
    qa_flags = correctness_flags(params_qa, [qa for qa, _ in dataset_pairs])
    qar_flags = correctness_flags(params_qar, [qar for _, qar in dataset_pairs])
    metrics = join_metrics(qa_flags, qar_flags)
    logger.info(
        "Q→A %.4f, QA→R %.4f, Q→AR %.4f over %d scenes",
        metrics.qa_accuracy,
        metrics.qar_accuracy,
        metrics.joint_accuracy,
        len(dataset_pairs),
    )
    return metrics


# ABLATION


@dataclass(frozen=True)
class AblationRow:
    """Validation Q→A accuracy of the dictionary twins trained from one seed."""

    seed: int
    with_dictionary: float
    without_dictionary: float

    @property
    def gap(self) -> float:
        """Accuracy with the dictionary minus accuracy without it."""
        return self.with_dictionary - self.without_dictionary


@dataclass(frozen=True)
class AblationReport:
    """Per-seed ablation rows and their means."""

    rows: tuple[AblationRow, ...]

    @property
    def mean_with_dictionary(self) -> float:
        """Mean accuracy of the twins using the dictionary."""
        return math.fsum(row.with_dictionary for row in self.rows) / len(self.rows)

    @property
    def mean_without_dictionary(self) -> float:
        """Mean accuracy of the twins without the dictionary."""
        return math.fsum(row.without_dictionary for row in self.rows) / len(self.rows)

    @property
    def mean_gap(self) -> float:
        """Mean accuracy gap over seeds."""
        return math.fsum(row.gap for row in self.rows) / len(self.rows)


def twin_configs(config: RunConfig, seed: int) -> tuple[RunConfig, RunConfig]:
    """Two configs identical except that only the first uses the dictionary."""
    base = config.model_copy(update={"seed": seed, "task_kind": TaskKind.ANSWERING})
    return (
        base.model_copy(update={"dictionary_enabled": True}),
        base.model_copy(update={"dictionary_enabled": False}),
    )


def run_ablation(config: RunConfig, seeds: Sequence[int] | None = None) -> AblationReport:
    """Train dictionary on/off twins per seed and compare validation Q→A accuracy.

    The fact table is shared by every scene, so the facts needed for a
    validation scene were only ever seen in other training scenes.

    Raises:
        ContractError: If no seed is given.
    """
    seeds = list(config.ablation_seeds if seeds is None else seeds)
    if not seeds:
        message = "run_ablation needs at least one seed"
        raise ContractError(message)
    rows = []
    for seed in seeds:
        with_config, without_config = twin_configs(config, seed)
        splits = synthetic_splits(with_config)
        vocabulary = build_vocab(splits.train, config.max_objects)
        scores = []
        for twin in (with_config, without_config):
            params = initialize_params(vocabulary, twin)
            train(params, splits.train, twin)
            scores.append(accuracy(params, splits.validation))
        row = AblationRow(seed=seed, with_dictionary=scores[0], without_dictionary=scores[1])
        logger.info(
            "Seed %d: with dictionary %.4f, without %.4f, gap %+.4f",
            seed,
            row.with_dictionary,
            row.without_dictionary,
            row.gap,
        )
        rows.append(row)
    return AblationReport(rows=tuple(rows))
