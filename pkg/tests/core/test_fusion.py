"""Tests for grounding, the LSTM recurrences and bilinear attention."""

from __future__ import annotations

import math

import numpy as np
import pytest

from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DimensionError
from dmvcr.core.exceptions import IndexOutOfRangeError
from dmvcr.core.fusion import AttentionParams
from dmvcr.core.fusion import BiLSTMParams
from dmvcr.core.fusion import GroundedSequence
from dmvcr.core.fusion import HiddenSequence
from dmvcr.core.fusion import LSTMParams
from dmvcr.core.fusion import bilstm_forward
from dmvcr.core.fusion import fuse
from dmvcr.core.fusion import ground
from dmvcr.core.fusion import lstm_cell
from dmvcr.core.fusion import lstm_scan
from dmvcr.core.fusion import object_response_attention
from dmvcr.core.fusion import response_query_attention
from dmvcr.core.numerics import Tensor
from dmvcr.core.numerics import backward
from dmvcr.core.numerics import concat
from dmvcr.core.numerics import mul
from dmvcr.core.numerics import narrow
from dmvcr.core.numerics import sum_all


def _zero_lstm(input_size: int, hidden_size: int) -> LSTMParams:
    fan_in = 2 * hidden_size + input_size
    weights = [Tensor.zeros(fan_in, hidden_size) for _ in range(4)]
    biases = [Tensor.zeros(1, hidden_size) for _ in range(4)]
    return LSTMParams(*weights, *biases)


def test_ground_attaches_tagged_object_features() -> None:
    """Test tagged rows carry their object's features and untagged rows zeros."""
    embeddings = Tensor(np.arange(6.0).reshape(3, 2))
    objects = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])

    grounded = ground(embeddings, [None, 1, 0], objects)

    np.testing.assert_array_equal(
        grounded.matrix.data,
        [[0.0, 1.0, 0.0, 0.0, 0.0], [2.0, 3.0, 4.0, 5.0, 6.0], [4.0, 5.0, 1.0, 2.0, 3.0]],
    )


def test_ground_zeroes_padded_rows() -> None:
    """Test masked positions are entirely zero."""
    grounded = ground(
        Tensor(np.ones((2, 2))),
        [0, None],
        Tensor([[3.0]]),
        np.array([True, False]),
    )
    np.testing.assert_array_equal(grounded.matrix.data, [[1.0, 1.0, 3.0], [0.0, 0.0, 0.0]])


def test_ground_tag_out_of_range() -> None:
    """Test a tag past the last object fails."""
    with pytest.raises(IndexOutOfRangeError):
        ground(Tensor(np.ones((1, 2))), [1], Tensor(np.ones((1, 3))))


def test_ground_tags_must_align() -> None:
    """Test one tag per embedding row."""
    with pytest.raises(DimensionError):
        ground(Tensor(np.ones((2, 2))), [None], Tensor(np.ones((1, 3))))


def test_lstm_cell_with_zero_weights() -> None:
    """Test every gate is one half when weights and biases are zero."""
    params = _zero_lstm(input_size=2, hidden_size=3)
    c_prev = Tensor([[1.0, -2.0, 0.5]])
    h_prev = Tensor.zeros(1, 3)

    c_t, h_t = lstm_cell(params, c_prev, h_prev, Tensor([[4.0, 5.0]]))

    np.testing.assert_allclose(c_t.data, 0.5 * c_prev.data)
    np.testing.assert_allclose(h_t.data, 0.5 * np.tanh(0.5 * c_prev.data))


def test_lstm_cell_feeds_cell_state_into_gates() -> None:
    """Test the previous cell state influences the gates through the weights."""
    rng = np.random.default_rng(0)
    params = LSTMParams.initialize(rng, input_size=2, hidden_size=3)
    h_prev, x_t = Tensor.zeros(1, 3), Tensor([[0.1, 0.2]])

    _, h_from_zero = lstm_cell(params, Tensor.zeros(1, 3), h_prev, x_t)
    _, h_from_other = lstm_cell(params, Tensor([[0.9, -0.9, 0.3]]), h_prev, x_t)

    assert not np.allclose(h_from_zero.data, h_from_other.data)


def test_lstm_cell_shape_mismatch() -> None:
    """Test state and input widths are checked."""
    params = _zero_lstm(input_size=2, hidden_size=3)
    with pytest.raises(DimensionError, match="state"):
        lstm_cell(params, Tensor.zeros(1, 2), Tensor.zeros(1, 3), Tensor.zeros(1, 2))
    with pytest.raises(DimensionError, match="input"):
        lstm_cell(params, Tensor.zeros(1, 3), Tensor.zeros(1, 3), Tensor.zeros(1, 4))


def test_lstm_params_shapes_are_validated() -> None:
    """Test mismatched gate weights are rejected."""
    weights = [Tensor.zeros(8, 3) for _ in range(3)] + [Tensor.zeros(9, 3)]
    biases = [Tensor.zeros(1, 3) for _ in range(4)]
    with pytest.raises(DimensionError, match="disagree"):
        LSTMParams(*weights, *biases)


def test_bilstm_forward_shapes_and_padding() -> None:
    """Test rows are 2d_h wide and padded rows stay zero."""
    rng = np.random.default_rng(1)
    params = BiLSTMParams.initialize(rng, input_size=3, hidden_size=2)
    grounded = ground(
        Tensor(rng.normal(size=(4, 2))),
        [None, 0, None, None],
        Tensor([[1.0]]),
        np.array([True, True, True, False]),
    )

    hidden = bilstm_forward(params, grounded)

    assert hidden.states.shape == (4, 4)
    np.testing.assert_array_equal(hidden.states.data[3], np.zeros(4))
    assert np.abs(hidden.states.data[:3]).sum() > 0


def test_bilstm_backward_direction_reads_the_future() -> None:
    """Test the backward half of row 0 depends on later tokens."""
    rng = np.random.default_rng(2)
    params = BiLSTMParams.initialize(rng, input_size=3, hidden_size=2)
    objects = Tensor([[0.5]])
    base = rng.normal(size=(3, 2))
    changed = base.copy()
    changed[2] += 1.0

    first = bilstm_forward(params, ground(Tensor(base), [None] * 3, objects))
    second = bilstm_forward(params, ground(Tensor(changed), [None] * 3, objects))

    np.testing.assert_array_equal(first.states.data[0, :2], second.states.data[0, :2])
    assert not np.allclose(first.states.data[0, 2:], second.states.data[0, 2:])


def _hidden(rng: np.random.Generator, mask: list[bool], width: int) -> HiddenSequence:
    states = rng.normal(size=(len(mask), width))
    states[~np.array(mask)] = 0.0
    return HiddenSequence(states=Tensor(states), mask=np.array(mask))


def test_attention_weights_exclude_padding() -> None:
    """Test weights are distributions with zero mass on masked positions."""
    rng = np.random.default_rng(3)
    params = AttentionParams.initialize(rng, object_dim=3, hidden_size=2)
    objects = Tensor(rng.normal(size=(2, 3)))
    h_r = _hidden(rng, [True, True, False], 4)
    h_q = _hidden(rng, [True, False, True, True], 4)

    object_side = object_response_attention(objects, h_r, params)
    query_side = response_query_attention(h_r, h_q, params)

    assert object_side.features.shape == (2, 4)
    assert query_side.features.shape == (3, 4)
    np.testing.assert_allclose(object_side.weights.data.sum(axis=1), np.ones(2))
    np.testing.assert_allclose(query_side.weights.data.sum(axis=1), np.ones(3))
    assert (object_side.weights.data[:, 2] == 0.0).all()
    assert (query_side.weights.data[:, 1] == 0.0).all()


def test_attention_fully_masked() -> None:
    """Test attending over nothing fails."""
    rng = np.random.default_rng(4)
    params = AttentionParams.initialize(rng, object_dim=3, hidden_size=2)
    with pytest.raises(ContractError, match="masked"):
        object_response_attention(Tensor(np.ones((1, 3))), _hidden(rng, [False], 4), params)


def test_attention_shape_mismatch() -> None:
    """Test object features must match the bilinear form."""
    rng = np.random.default_rng(5)
    params = AttentionParams.initialize(rng, object_dim=3, hidden_size=2)
    with pytest.raises(DimensionError):
        object_response_attention(Tensor(np.ones((1, 2))), _hidden(rng, [True], 4), params)


def test_fuse_packages_both_attentions() -> None:
    """Test fq follows the response positions and fr the objects."""
    rng = np.random.default_rng(6)
    params = AttentionParams.initialize(rng, object_dim=3, hidden_size=2)
    h_r = _hidden(rng, [True, True, False], 4)

    fused = fuse(Tensor(rng.normal(size=(2, 3))), _hidden(rng, [True, True], 4), h_r, params)

    assert fused.fq.shape == (3, 4)
    assert fused.fr.shape == (2, 4)
    np.testing.assert_array_equal(fused.fq_mask, h_r.mask)
    assert fused.fr_mask.all()
    assert fused.query_weights is not None
    assert fused.object_weights is not None


def _loop_attention(
    queries: np.ndarray, weight: np.ndarray, keys: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    weights = np.zeros((len(queries), len(keys)))
    features = np.zeros((len(queries), keys.shape[1]))
    for i, query in enumerate(queries):
        scores = [
            math.fsum(
                query[a] * weight[a, b] * keys[j, b]
                for a in range(len(query))
                for b in range(keys.shape[1])
            )
            if mask[j]
            else None
            for j in range(len(keys))
        ]
        top = max(score for score in scores if score is not None)
        exps = [0.0 if score is None else math.exp(score - top) for score in scores]
        total = math.fsum(exps)
        for j in range(len(keys)):
            weights[i, j] = exps[j] / total
            features[i] += weights[i, j] * keys[j]
    return features, weights


def _random_mask(rng: np.random.Generator, length: int) -> np.ndarray:
    mask = rng.random(length) < 0.7
    mask[rng.integers(0, length)] = True
    return mask


def test_attention_matches_a_loop_oracle() -> None:
    """Test both attention modules against explicit loops on random cases."""
    rng = np.random.default_rng(7)
    for _ in range(100):
        hidden, object_dim = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        params = AttentionParams.initialize(rng, object_dim=object_dim, hidden_size=hidden)
        objects = rng.normal(size=(int(rng.integers(1, 5)), object_dim))
        h_r = _hidden(rng, list(_random_mask(rng, int(rng.integers(1, 6)))), 2 * hidden)
        h_q = _hidden(rng, list(_random_mask(rng, int(rng.integers(1, 6)))), 2 * hidden)

        object_side = object_response_attention(Tensor(objects), h_r, params)
        query_side = response_query_attention(h_r, h_q, params)

        features, weights = _loop_attention(objects, params.w_r.data, h_r.states.data, h_r.mask)
        np.testing.assert_allclose(object_side.features.data, features, rtol=0, atol=1e-12)
        np.testing.assert_allclose(object_side.weights.data, weights, rtol=0, atol=1e-12)
        features, weights = _loop_attention(
            h_r.states.data, params.w_q.data, h_q.states.data, h_q.mask
        )
        np.testing.assert_allclose(query_side.features.data, features, rtol=0, atol=1e-12)
        np.testing.assert_allclose(query_side.weights.data, weights, rtol=0, atol=1e-12)
        np.testing.assert_allclose(query_side.weights.data.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert (query_side.weights.data[:, ~h_q.mask] == 0.0).all()


def test_forget_gate_saturation_keeps_the_cell_state() -> None:
    """Test a large forget bias with zero weights carries c_prev through unchanged."""
    params = _zero_lstm(input_size=2, hidden_size=3)
    params.b_f.data[...] = 20.0
    c_prev = Tensor([[0.7, -1.5, 2.0]])

    c_t, _ = lstm_cell(params, c_prev, Tensor.zeros(1, 3), Tensor([[1.0, -1.0]]))

    np.testing.assert_allclose(c_t.data, c_prev.data, rtol=1e-8, atol=0)


def _chained_cells(
    params: LSTMParams, inputs: Tensor, mask: np.ndarray, *, reverse: bool
) -> Tensor:
    c = Tensor.zeros(1, params.hidden_size)
    h = Tensor.zeros(1, params.hidden_size)
    rows = [Tensor.zeros(1, params.hidden_size)] * inputs.shape[0]
    positions = range(inputs.shape[0] - 1, -1, -1) if reverse else range(inputs.shape[0])
    for t in positions:
        if mask[t]:
            c, h = lstm_cell(params, c, h, narrow(inputs, 0, t, t + 1))
            rows[t] = h
    return concat(rows, axis=0)


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_scan_matches_chained_cells(reverse: bool) -> None:
    """Test the scan reproduces step-by-step cell applications, skipping masked rows."""
    rng = np.random.default_rng(8)
    for _ in range(20):
        width, hidden, length = (int(value) for value in rng.integers(1, 6, size=3))
        params = LSTMParams.initialize(rng, input_size=width, hidden_size=hidden)
        for bias in params.biases:
            bias.data[...] = rng.normal(size=bias.shape)
        inputs = Tensor(rng.normal(size=(length, width)))
        mask = _random_mask(rng, length)

        states = lstm_scan(params, inputs, mask, reverse=reverse)
        expected = _chained_cells(params, inputs, mask, reverse=reverse)

        np.testing.assert_allclose(states.data, expected.data, rtol=0, atol=1e-12)
        assert (states.data[~mask] == 0.0).all()


def test_lstm_scan_gradients_match_chained_cells() -> None:
    """Test backpropagation through the scan agrees with the cell-by-cell graph."""
    rng = np.random.default_rng(9)
    params = LSTMParams.initialize(rng, input_size=3, hidden_size=2)
    for bias in params.biases:
        bias.data[...] = rng.normal(size=bias.shape)
    inputs = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    mask = np.array([True, False, True, True, False])
    weighting = Tensor(rng.normal(size=(5, 2)))
    tensors = (inputs, *params.weights, *params.biases)

    backward(sum_all(mul(lstm_scan(params, inputs, mask, reverse=True), weighting)))
    scan_grads = [tensor.grad.copy() for tensor in tensors]
    for tensor in tensors:
        tensor.zero_grad()
    backward(sum_all(mul(_chained_cells(params, inputs, mask, reverse=True), weighting)))

    for scan_grad, tensor in zip(scan_grads, tensors, strict=True):
        np.testing.assert_allclose(scan_grad, tensor.grad, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(scan_grads[0][~mask], 0.0)


def test_lstm_scan_shape_mismatch() -> None:
    """Test the rows and the mask must fit the parameters."""
    params = _zero_lstm(input_size=2, hidden_size=3)
    with pytest.raises(DimensionError, match="width"):
        lstm_scan(params, Tensor.zeros(2, 3), np.array([True, True]))
    with pytest.raises(DimensionError, match="mask"):
        lstm_scan(params, Tensor.zeros(2, 2), np.array([True]))


def test_bilstm_palindrome_is_direction_symmetric() -> None:
    """Test a palindrome read by mirrored directions gives mirrored states bit for bit."""
    rng = np.random.default_rng(10)
    direction = LSTMParams.initialize(rng, input_size=3, hidden_size=2)
    for bias in direction.biases:
        bias.data[...] = rng.normal(size=bias.shape)
    params = BiLSTMParams(forward=direction, backward=direction)
    half = rng.normal(size=(2, 3))
    palindrome = np.vstack([half, rng.normal(size=(1, 3)), half[::-1]])

    grounded = GroundedSequence(matrix=Tensor(palindrome), mask=np.ones(5, dtype=bool))

    states = bilstm_forward(params, grounded).states.data

    length = palindrome.shape[0]
    for t in range(length):
        np.testing.assert_array_equal(states[t, :2], states[length - 1 - t, 2:])


def test_attention_output_lies_in_the_convex_hull() -> None:
    """Test every attended row stays between the coordinatewise extremes of the valid rows."""
    rng = np.random.default_rng(11)
    for _ in range(50):
        params = AttentionParams.initialize(rng, object_dim=3, hidden_size=2)
        h_r = _hidden(rng, list(_random_mask(rng, 4)), 4)
        h_q = _hidden(rng, list(_random_mask(rng, 5)), 4)

        outputs = [
            (object_response_attention(Tensor(rng.normal(size=(3, 3))), h_r, params), h_r),
            (response_query_attention(h_r, h_q, params), h_q),
        ]

        for output, attended in outputs:
            valid = attended.states.data[attended.mask]
            low, high = valid.min(axis=0) - 1e-12, valid.max(axis=0) + 1e-12
            assert (output.features.data >= low).all()
            assert (output.features.data <= high).all()
