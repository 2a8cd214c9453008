"""Finite-difference gradient suite over every differentiable operation and the full scorer.

Tensor-valued operations are reduced to a scalar with a fixed random weighting,
``sum(op(x) * W)``, so every output component contributes to the check.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from collections.abc import Iterable
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from dmvcr.core.datamodel import build_vocab
from dmvcr.core.datamodel import generate_synthetic
from dmvcr.core.encoder import DictionaryMemory
from dmvcr.core.encoder import dictionary_lookup
from dmvcr.core.encoder import encode_sequence
from dmvcr.core.fusion import AttentionParams
from dmvcr.core.fusion import FusedFeatures
from dmvcr.core.fusion import HiddenSequence
from dmvcr.core.fusion import LSTMParams
from dmvcr.core.fusion import lstm_cell
from dmvcr.core.fusion import lstm_scan
from dmvcr.core.fusion import object_response_attention
from dmvcr.core.fusion import response_query_attention
from dmvcr.core.model import initialize_params
from dmvcr.core.model import score_candidate
from dmvcr.core.numerics import ReduceOp
from dmvcr.core.numerics import Tensor
from dmvcr.core.numerics import add
from dmvcr.core.numerics import concat
from dmvcr.core.numerics import cross_entropy_logits
from dmvcr.core.numerics import finite_difference_check
from dmvcr.core.numerics import matmul
from dmvcr.core.numerics import mul
from dmvcr.core.numerics import narrow
from dmvcr.core.numerics import reduce
from dmvcr.core.numerics import reshape
from dmvcr.core.numerics import scale
from dmvcr.core.numerics import sigmoid
from dmvcr.core.numerics import softmax
from dmvcr.core.numerics import sub
from dmvcr.core.numerics import sum_all
from dmvcr.core.numerics import take_rows
from dmvcr.core.numerics import tanh
from dmvcr.core.numerics import transpose
from dmvcr.core.training import build_world
from dmvcr.utils.settings import RunConfig
from dmvcr.utils.settings import load_run_config

logger = logging.getLogger(__name__)

OPERATION_THRESHOLD = 1e-4
LAYER_THRESHOLD = 1e-5
MODEL_THRESHOLD = 1e-3
MAX_EXTENT = 8
EPSILON = 1e-5

ScalarFunction = Callable[[Tensor], Tensor]
Case = tuple[ScalarFunction, Tensor]


@dataclass(frozen=True)
class GradCheckResult:
    """Worst relative gradient error of one operation over every seed and case."""

    name: str
    max_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        """Whether the error stays below the threshold."""
        return self.max_error < self.threshold


def _leaf(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _extent(rng: np.random.Generator, low: int = 1) -> int:
    return int(rng.integers(low, MAX_EXTENT + 1))


def _weighted(rng: np.random.Generator, op: ScalarFunction, x: Tensor) -> ScalarFunction:
    """Scalar ``sum(op(x) * W)`` with W drawn once for the case."""
    weights = Tensor(rng.normal(size=op(x).shape))
    return lambda value: sum_all(mul(op(value), weights))


# OPERATION CASES


def _matmul_cases(rng: np.random.Generator) -> list[Case]:
    m, n, p = _extent(rng), _extent(rng), _extent(rng)
    a, b = _leaf(rng, m, n), _leaf(rng, n, p)
    return [
        (_weighted(rng, lambda x: matmul(x, b), a), a),
        (_weighted(rng, lambda x: matmul(a, x), b), b),
    ]


def _elementwise_cases(rng: np.random.Generator) -> list[Case]:
    shape = (_extent(rng), _extent(rng))
    a, b = _leaf(rng, *shape), _leaf(rng, *shape)
    return [
        (_weighted(rng, lambda x: add(x, b), a), a),
        (_weighted(rng, lambda x: sub(a, x), b), b),
        (_weighted(rng, lambda x: mul(x, b), a), a),
        (_weighted(rng, lambda x: mul(x, x), a), a),
    ]


def _activation_cases(rng: np.random.Generator) -> list[Case]:
    x = _leaf(rng, _extent(rng), _extent(rng))
    return [(_weighted(rng, sigmoid, x), x), (_weighted(rng, tanh, x), x)]


def _softmax_cases(rng: np.random.Generator) -> list[Case]:
    x = _leaf(rng, _extent(rng), _extent(rng, 2))
    return [
        (_weighted(rng, lambda value: softmax(value, axis=1), x), x),
        (_weighted(rng, lambda value: softmax(value, axis=0), x), x),
    ]


def _concat_cases(rng: np.random.Generator) -> list[Case]:
    rows = _extent(rng)
    a, b = _leaf(rng, rows, _extent(rng)), _leaf(rng, rows, _extent(rng))
    c = _leaf(rng, _extent(rng), a.shape[1])
    return [
        (_weighted(rng, lambda x: concat([x, b], axis=1), a), a),
        (_weighted(rng, lambda x: concat([x, c, x], axis=0), a), a),
    ]


def _reduce_cases(rng: np.random.Generator) -> list[Case]:
    x = _leaf(rng, _extent(rng), _extent(rng))
    return [
        (_weighted(rng, lambda value: reduce(ReduceOp.SUM, value, axis=0), x), x),
        (_weighted(rng, lambda value: reduce(ReduceOp.MEAN, value, axis=1), x), x),
        (lambda value: reduce(ReduceOp.MEAN, mul(value, value)), x),
    ]


def _cross_entropy_cases(rng: np.random.Generator) -> list[Case]:
    classes = _extent(rng, 2)
    logits = _leaf(rng, 1, classes)
    gold = int(rng.integers(0, classes))
    return [(lambda value: cross_entropy_logits(value, gold), logits)]


def _plumbing_cases(rng: np.random.Generator) -> list[Case]:
    rows, cols = _extent(rng, 2), _extent(rng, 2)
    x = _leaf(rng, rows, cols)
    indices = rng.integers(0, rows, size=_extent(rng))
    start = int(rng.integers(0, cols))
    stop = int(rng.integers(start + 1, cols + 1))
    factor = float(rng.normal())
    return [
        (_weighted(rng, lambda value: take_rows(value, indices), x), x),
        (_weighted(rng, lambda value: narrow(value, 1, start, stop), x), x),
        (_weighted(rng, transpose, x), x),
        (_weighted(rng, lambda value: scale(value, factor), x), x),
        (_weighted(rng, lambda value: reshape(value, (cols, rows)), x), x),
    ]


# LAYER CASES


def _lstm_cases(rng: np.random.Generator) -> list[Case]:
    hidden, width = _extent(rng), _extent(rng)
    params = LSTMParams.initialize(rng, width, hidden)
    for bias in params.biases:
        bias.data[...] = rng.normal(scale=0.5, size=bias.shape)
    c_prev, h_prev, x_t = _leaf(rng, 1, hidden), _leaf(rng, 1, hidden), _leaf(rng, 1, width)

    def cell(c: Tensor, h: Tensor, x: Tensor) -> Tensor:
        c_t, h_t = lstm_cell(params, c, h, x)
        return concat([c_t, h_t], axis=1)

    cases: list[Case] = [
        (_weighted(rng, lambda value: cell(value, h_prev, x_t), c_prev), c_prev),
        (_weighted(rng, lambda value: cell(c_prev, value, x_t), h_prev), h_prev),
        (_weighted(rng, lambda value: cell(c_prev, h_prev, value), x_t), x_t),
    ]
    cases.extend(
        (_weighted(rng, lambda _: cell(c_prev, h_prev, x_t), tensor), tensor)
        for tensor in (*params.weights, *params.biases)
    )
    return cases


def _scan_cases(rng: np.random.Generator) -> list[Case]:
    hidden, width, length = _extent(rng), _extent(rng), _extent(rng)
    params = LSTMParams.initialize(rng, width, hidden)
    for bias in params.biases:
        bias.data[...] = rng.normal(scale=0.5, size=bias.shape)
    inputs = _leaf(rng, length, width)
    mask = np.ones(length, dtype=bool)
    if length > 1:
        mask[0] = False
    cases: list[Case] = []
    for reverse in (False, True):

        def scan(_: Tensor, *, reverse: bool = reverse) -> Tensor:
            return lstm_scan(params, inputs, mask, reverse=reverse)

        cases.append((_weighted(rng, scan, inputs), inputs))
        cases.extend(
            (_weighted(rng, scan, tensor), tensor) for tensor in (*params.weights, *params.biases)
        )
    return cases


def _hidden(rng: np.random.Generator, length: int, width: int) -> tuple[HiddenSequence, Tensor]:
    states = _leaf(rng, length, width)
    mask = np.ones(length, dtype=bool)
    if length > 1:
        mask[-1] = False
    return HiddenSequence(states=states, mask=mask), states


def _attention_cases(rng: np.random.Generator) -> list[Case]:
    hidden = _extent(rng)
    object_dim = _extent(rng)
    params = AttentionParams.initialize(rng, object_dim, hidden)
    objects = _leaf(rng, _extent(rng), object_dim)
    h_r, r_states = _hidden(rng, _extent(rng), 2 * hidden)
    h_q, q_states = _hidden(rng, _extent(rng), 2 * hidden)

    def objects_side(_: Tensor) -> Tensor:
        return object_response_attention(objects, h_r, params).features

    def query_side(_: Tensor) -> Tensor:
        return response_query_attention(h_r, h_q, params).features

    return [
        (_weighted(rng, objects_side, objects), objects),
        (_weighted(rng, objects_side, r_states), r_states),
        (_weighted(rng, objects_side, params.w_r), params.w_r),
        (_weighted(rng, query_side, r_states), r_states),
        (_weighted(rng, query_side, q_states), q_states),
        (_weighted(rng, query_side, params.w_q), params.w_q),
    ]


def _dictionary_cases(rng: np.random.Generator) -> list[Case]:
    width, size = _extent(rng), _extent(rng)
    memory = DictionaryMemory.initialize(rng, width, size)
    h = _leaf(rng, 1, width)

    def lookup(_: Tensor) -> Tensor:
        h_hat, alpha = dictionary_lookup(h, memory)
        return concat([h_hat, alpha], axis=1)

    return [(_weighted(rng, lookup, h), h), (_weighted(rng, lookup, memory.d), memory.d)]


def _encoder_cases(rng: np.random.Generator) -> list[Case]:
    width, hidden = 2 * _extent(rng), _extent(rng)
    params = LSTMParams.initialize(rng, width, hidden)
    fq = _leaf(rng, _extent(rng), width)
    fr = _leaf(rng, _extent(rng), width)
    fq_mask = np.ones(fq.shape[0], dtype=bool)
    if fq.shape[0] > 1:
        fq_mask[-1] = False
    fused = FusedFeatures(fq=fq, fr=fr, fq_mask=fq_mask, fr_mask=np.ones(fr.shape[0], dtype=bool))

    def run(_: Tensor) -> Tensor:
        return encode_sequence(params, fused)

    return [
        (_weighted(rng, run, fq), fq),
        (_weighted(rng, run, fr), fr),
        (_weighted(rng, run, params.w_f), params.w_f),
    ]


# MODEL CASE


def _model_cases(config: RunConfig) -> Callable[[np.random.Generator, int], list[Case]]:
    def build(rng: np.random.Generator, seed: int) -> list[Case]:
        run_config = config.model_copy(update={"seed": seed, "zero_head_init": False})
        instance = generate_synthetic(build_world(run_config), 1, seed, run_config.task_kind)[0]
        params = initialize_params(build_vocab([instance], run_config.max_objects), run_config)
        candidate = int(rng.integers(0, len(instance.responses)))

        def score(_: Tensor) -> Tensor:
            return sum_all(score_candidate(params, instance, candidate))

        named = params.named_parameters()
        chosen = ("embedding", "fusion.forward.w_i", "attention.w_r", "encoder.w_c", "memory.d")
        return [(score, named[name]) for name in (*chosen, "head.w1", "head.w2")]

    return build


def _check(
    name: str,
    threshold: float,
    build: Callable[[np.random.Generator, int], list[Case]],
    seeds: Iterable[int],
) -> GradCheckResult:
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for function, x in build(rng, seed):
            worst = max(worst, finite_difference_check(function, x, EPSILON))
    result = GradCheckResult(name=name, max_error=worst, threshold=threshold)
    logger.debug("%s: max relative error %.3e (threshold %.0e)", name, worst, threshold)
    return result


def _seedless(
    builder: Callable[[np.random.Generator], list[Case]],
) -> Callable[[np.random.Generator, int], list[Case]]:
    return lambda rng, _seed: builder(rng)


def run_gradient_suite(
    seeds: Sequence[int],
    model_config: RunConfig | None = None,
) -> list[GradCheckResult]:
    """Check every gradient rule against central differences.

    Args:
        seeds: One random draw of shapes and values per seed.
        model_config: Configuration for the end-to-end scorer check; the bundled
            tiny preset when omitted.

    Returns:
        list[GradCheckResult]: One result per checked operation.
    """
    model_config = load_run_config("tiny") if model_config is None else model_config
    suite: list[tuple[str, float, Callable[[np.random.Generator, int], list[Case]]]] = [
        ("matmul", OPERATION_THRESHOLD, _seedless(_matmul_cases)),
        ("elementwise", OPERATION_THRESHOLD, _seedless(_elementwise_cases)),
        ("activation", OPERATION_THRESHOLD, _seedless(_activation_cases)),
        ("softmax", OPERATION_THRESHOLD, _seedless(_softmax_cases)),
        ("concat", OPERATION_THRESHOLD, _seedless(_concat_cases)),
        ("reduce", OPERATION_THRESHOLD, _seedless(_reduce_cases)),
        ("cross_entropy_logits", OPERATION_THRESHOLD, _seedless(_cross_entropy_cases)),
        (
            "take_rows+narrow+transpose+scale+reshape",
            OPERATION_THRESHOLD,
            _seedless(_plumbing_cases),
        ),
        ("lstm_cell", LAYER_THRESHOLD, _seedless(_lstm_cases)),
        ("lstm_scan", LAYER_THRESHOLD, _seedless(_scan_cases)),
        ("attention", LAYER_THRESHOLD, _seedless(_attention_cases)),
        ("dictionary_lookup", LAYER_THRESHOLD, _seedless(_dictionary_cases)),
        ("encode_sequence", LAYER_THRESHOLD, _seedless(_encoder_cases)),
        ("score_candidate", MODEL_THRESHOLD, _model_cases(model_config)),
    ]
    return [_check(name, threshold, build, seeds) for name, threshold, build in suite]
