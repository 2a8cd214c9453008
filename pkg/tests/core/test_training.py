"""Tests for mini-batch training, accuracy, joined evaluation and the ablation."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from pytest_mock import MockerFixture

from dmvcr.core import training as training_module
from dmvcr.core.datamodel import TaskInstance
from dmvcr.core.datamodel import TaskKind
from dmvcr.core.datamodel import build_vocab
from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DivergenceError
from dmvcr.core.model import DICTIONARY_PARAMETER
from dmvcr.core.model import ModelParams
from dmvcr.core.model import batch_loss
from dmvcr.core.model import initialize_params
from dmvcr.core.optim import AdamState
from dmvcr.core.optim import learning_rates
from dmvcr.core.training import EVALUATION_SEED_OFFSET
from dmvcr.core.training import TRAIN_SEED_OFFSET
from dmvcr.core.training import VALIDATION_SEED_OFFSET
from dmvcr.core.training import accuracy
from dmvcr.core.training import evaluate
from dmvcr.core.training import join_metrics
from dmvcr.core.training import run_ablation
from dmvcr.core.training import synthetic_splits
from dmvcr.core.training import train
from dmvcr.core.training import train_batch
from dmvcr.core.training import twin_configs
from dmvcr.utils.settings import RunConfig

# Wall-clock limit for training the desk preset.
DESK_TRAINING_BUDGET_SECONDS = 300.0


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: tensor.data.copy() for name, tensor in params.named_parameters().items()}


def test_split_seeds_are_distinct() -> None:
    """Test training, validation and evaluation scenes use different seed offsets."""
    assert len({TRAIN_SEED_OFFSET, VALIDATION_SEED_OFFSET, EVALUATION_SEED_OFFSET}) == 3


def test_synthetic_splits_sizes(tiny_config: RunConfig) -> None:
    """Test split sizes and kinds follow the configuration."""
    splits = synthetic_splits(tiny_config, TaskKind.RATIONALE)
    assert len(splits.train) == tiny_config.n_train
    assert len(splits.validation) == tiny_config.n_val
    assert all(instance.kind is TaskKind.RATIONALE for instance in splits.train)
    assert splits.train[0] != splits.validation[0]


def test_train_records_every_batch(tiny_config: RunConfig) -> None:
    """Test one loss record per batch, with the epoch's validation accuracy."""
    splits = synthetic_splits(tiny_config)
    params = initialize_params(build_vocab(splits.train), tiny_config)

    log = train(params, splits.train, tiny_config, splits.validation)

    batches_per_epoch = math.ceil(tiny_config.n_train / tiny_config.batch_size)
    assert len(log.records) == tiny_config.epochs * batches_per_epoch
    assert len(log.epoch_losses) == tiny_config.epochs
    assert log.records[0].loss == pytest.approx(np.log(4.0), abs=1e-6)
    for epoch in range(1, tiny_config.epochs + 1):
        accuracies = {record.val_qa_acc for record in log.records if record.epoch == epoch}
        assert len(accuracies) == 1
        (value,) = accuracies
        assert value is not None
        assert 0.0 <= value <= 1.0
    assert [record.batch for record in log.records[:batches_per_epoch]] == list(
        range(1, batches_per_epoch + 1)
    )


def test_train_without_validation_logs_no_accuracy(tiny_config: RunConfig) -> None:
    """Test the accuracy column stays empty without a validation set."""
    splits = synthetic_splits(tiny_config)
    params = initialize_params(build_vocab(splits.train), tiny_config)
    log = train(params, splits.train, tiny_config.model_copy(update={"epochs": 1}))
    assert all(record.val_qa_acc is None for record in log.records)


def test_training_is_deterministic(tiny_config: RunConfig) -> None:
    """Test equal seeds reproduce the losses and parameters bit for bit."""
    splits = synthetic_splits(tiny_config)
    vocabulary = build_vocab(splits.train)
    first = initialize_params(vocabulary, tiny_config)
    second = initialize_params(vocabulary, tiny_config)

    first_log = train(first, splits.train, tiny_config)
    second_log = train(second, splits.train, tiny_config)

    assert first_log.losses == second_log.losses
    for name, values in _snapshot(first).items():
        np.testing.assert_array_equal(values, second.named_parameters()[name].data)


def test_zero_dictionary_rate_freezes_the_dictionary(tiny_config: RunConfig) -> None:
    """Test lr_dict = 0 leaves the dictionary bit-identical while the rest trains."""
    config = tiny_config.model_copy(update={"lr_dict": 0.0, "epochs": 1, "zero_head_init": False})
    splits = synthetic_splits(config)
    params = initialize_params(build_vocab(splits.train), config)
    before = _snapshot(params)

    train(params, splits.train, config)

    np.testing.assert_array_equal(params.memory.d.data, before[DICTIONARY_PARAMETER])
    assert not np.array_equal(params.head.w1.data, before["head.w1"])


def test_zero_base_rate_freezes_everything_but_the_dictionary(tiny_config: RunConfig) -> None:
    """Test lr_base = 0 leaves every non-dictionary parameter bit-identical."""
    config = tiny_config.model_copy(update={"lr_base": 0.0, "epochs": 1, "zero_head_init": False})
    splits = synthetic_splits(config)
    params = initialize_params(build_vocab(splits.train), config)
    before = _snapshot(params)

    train(params, splits.train, config)

    for name, tensor in params.named_parameters().items():
        if name == DICTIONARY_PARAMETER:
            assert not np.array_equal(tensor.data, before[name])
        else:
            np.testing.assert_array_equal(tensor.data, before[name])


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_first_step_lowers_the_batch_loss(desk_config: RunConfig, seed: int) -> None:
    """Test one small optimizer step on a fixed batch strictly reduces its loss."""
    config = desk_config.model_copy(update={"seed": seed, "n_train": 4, "lr_base": 1e-3})
    batch = synthetic_splits(config).train
    params = initialize_params(build_vocab(batch), config)

    before = batch_loss(params, batch).item()
    train_batch(params, batch, AdamState.from_config(config), learning_rates(config))
    after = batch_loss(params, batch).item()

    assert before == pytest.approx(np.log(4.0), abs=1e-6)
    assert after < before


def test_divergence_guard(tiny_config: RunConfig, mocker: MockerFixture) -> None:
    """Test an exploding epoch loss aborts training."""
    splits = synthetic_splits(tiny_config)
    params = initialize_params(build_vocab(splits.train), tiny_config)
    mocker.patch(
        "dmvcr.core.training.train_batch",
        side_effect=[[1.0] * 4, [100.0] * 4, [100.0] * 4],
    )

    with pytest.raises(DivergenceError, match="diverged at epoch 1"):
        train(params, splits.train, tiny_config)


def test_train_needs_data(tiny_params: ModelParams, tiny_config: RunConfig) -> None:
    """Test training on nothing fails."""
    with pytest.raises(ContractError):
        train(tiny_params, [], tiny_config)


def test_accuracy_of_uniform_model(
    tiny_params: ModelParams, answering_instances: list[TaskInstance]
) -> None:
    """Test a uniform model always picks candidate 0."""
    expected = sum(instance.gold == 0 for instance in answering_instances)
    assert accuracy(tiny_params, answering_instances) == expected / len(answering_instances)

    with pytest.raises(ContractError):
        accuracy(tiny_params, [])


def test_join_metrics() -> None:
    """Test a scene counts for Q→AR only when answer and rationale are both right."""
    metrics = join_metrics([True, True, False, True], [True, False, True, True])
    assert metrics.qa_accuracy == 0.75
    assert metrics.qar_accuracy == 0.75
    assert metrics.joint_accuracy == 0.5
    assert metrics.joint_flags == (True, False, False, True)


def test_join_metrics_contract() -> None:
    """Test flag lists must be non-empty and aligned."""
    with pytest.raises(ContractError):
        join_metrics([True], [True, False])
    with pytest.raises(ContractError):
        join_metrics([], [])


def test_evaluate_joint_never_exceeds_either_task(
    tiny_config: RunConfig,
    answering_instances: list[TaskInstance],
    rationale_instances: list[TaskInstance],
) -> None:
    """Test Q→AR is bounded by Q→A and QA→R."""
    config = tiny_config.model_copy(update={"zero_head_init": False})
    params_qa = initialize_params(build_vocab(answering_instances), config)
    params_qar = initialize_params(build_vocab(rationale_instances), config)

    metrics = evaluate(params_qa, params_qar, list(zip(answering_instances, rationale_instances)))

    assert metrics.joint_accuracy <= min(metrics.qa_accuracy, metrics.qar_accuracy)
    assert len(metrics.joint_flags) == len(answering_instances)


def test_evaluate_rejects_bad_pairs(
    tiny_params: ModelParams,
    answering_instances: list[TaskInstance],
    rationale_instances: list[TaskInstance],
) -> None:
    """Test pairs must be (answering, rationale) over one scene."""
    with pytest.raises(ContractError, match="not an"):
        evaluate(tiny_params, tiny_params, [(rationale_instances[0], answering_instances[0])])
    other_scene = next(
        instance
        for instance in rationale_instances
        if instance.objects != answering_instances[0].objects
    )
    with pytest.raises(ContractError, match="different scenes"):
        evaluate(tiny_params, tiny_params, [(answering_instances[0], other_scene)])


def test_twin_configs_differ_only_in_the_dictionary(tiny_config: RunConfig) -> None:
    """Test the ablation twins share everything else."""
    with_dictionary, without_dictionary = twin_configs(tiny_config, seed=9)
    assert with_dictionary.dictionary_enabled
    assert not without_dictionary.dictionary_enabled
    assert with_dictionary.seed == without_dictionary.seed == 9
    assert with_dictionary.model_dump(exclude={"dictionary_enabled"}) == (
        without_dictionary.model_dump(exclude={"dictionary_enabled"})
    )


def test_run_ablation_reports_every_seed(tiny_config: RunConfig) -> None:
    """Test one row per seed with accuracies in [0, 1]."""
    report = run_ablation(tiny_config.model_copy(update={"epochs": 1}), seeds=[1, 2])

    assert [row.seed for row in report.rows] == [1, 2]
    for row in report.rows:
        assert 0.0 <= row.with_dictionary <= 1.0
        assert 0.0 <= row.without_dictionary <= 1.0
        assert row.gap == row.with_dictionary - row.without_dictionary
    assert report.mean_gap == pytest.approx(
        report.mean_with_dictionary - report.mean_without_dictionary
    )

    with pytest.raises(ContractError):
        run_ablation(tiny_config, seeds=[])


@pytest.mark.slow
def test_training_lowers_the_epoch_loss(tiny_config: RunConfig) -> None:
    """Test several epochs of training reduce the mean training loss."""
    config = tiny_config.model_copy(update={"n_train": 24, "epochs": 15})
    splits = synthetic_splits(config)
    params = initialize_params(build_vocab(splits.train), config)

    log = train(params, splits.train, config, splits.validation)

    assert log.epoch_losses[-1] < log.epoch_losses[0]


def test_join_metrics_three_scenes() -> None:
    """Test the joined accuracy on a three-scene example."""
    metrics = join_metrics([True, True, False], [True, False, True])
    assert (metrics.qa_accuracy, metrics.qar_accuracy, metrics.joint_accuracy) == (
        2 / 3,
        2 / 3,
        1 / 3,
    )


def test_join_metrics_of_random_guesses() -> None:
    """Test uniform guessing among four candidates gets both tasks right about 1/16 of the time."""
    rng = np.random.default_rng(0)
    qa_flags = (rng.integers(0, 4, size=1000) == 0).tolist()
    qar_flags = (rng.integers(0, 4, size=1000) == 0).tolist()

    metrics = join_metrics(qa_flags, qar_flags)

    assert metrics.joint_accuracy == pytest.approx(1 / 16, abs=0.03)
    assert metrics.qa_accuracy == pytest.approx(1 / 4, abs=0.05)


def test_validation_follows_the_interval(tiny_config: RunConfig, mocker: MockerFixture) -> None:
    """Test validation runs every validation_interval epochs and after the last epoch."""
    config = tiny_config.model_copy(update={"epochs": 5, "validation_interval": 2})
    splits = synthetic_splits(config)
    params = initialize_params(build_vocab(splits.train), config)
    measured = mocker.spy(training_module, "accuracy")

    log = train(params, splits.train, config, splits.validation)

    validated = sorted({record.epoch for record in log.records if record.val_qa_acc is not None})
    assert validated == [2, 4, 5]
    assert measured.call_count == 3


@pytest.mark.slow
def test_desk_preset_learns_within_budget(desk_config: RunConfig) -> None:
    """Test the desk preset fits its training split to 95% within the time budget."""
    splits = synthetic_splits(desk_config)
    params = initialize_params(build_vocab(splits.train, desk_config.max_objects), desk_config)

    start = time.perf_counter()
    train(params, splits.train, desk_config, splits.validation)
    elapsed = time.perf_counter() - start

    assert desk_config.epochs <= 50
    assert accuracy(params, splits.train) >= 0.95
    assert elapsed < DESK_TRAINING_BUDGET_SECONDS


@pytest.mark.slow
def test_dictionary_twin_is_not_worse(desk_config: RunConfig) -> None:
    """Test the dictionary-enabled twins match or beat the disabled ones on validation."""
    report = run_ablation(desk_config, seeds=[1, 2])

    assert report.mean_with_dictionary >= report.mean_without_dictionary
    assert report.mean_gap >= 0.0
