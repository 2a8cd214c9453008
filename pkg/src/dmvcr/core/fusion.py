"""Multimodal fusion: visual grounding, BiLSTM contextualisation and bilinear attention.

The LSTM follows the gate equations with the previous cell state fed into every
gate alongside the previous hidden state and the current input::

    z_t = [c_{t-1}, h_{t-1}, x_t]
    i_t, o_t, f_t = sigmoid(z_t W_i + b_i), sigmoid(z_t W_o + b_o), sigmoid(z_t W_f + b_f)
    c_t = f_t * c_{t-1} + i_t * tanh(z_t W_c + b_c)
    h_t = o_t * tanh(c_t)

Vectors are 1×d row tensors and weight matrices act from the right.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DimensionError
from dmvcr.core.exceptions import IndexOutOfRangeError
from dmvcr.core.numerics import MASK_VALUE
from dmvcr.core.numerics import FloatArray
from dmvcr.core.numerics import Tensor
from dmvcr.core.numerics import add
from dmvcr.core.numerics import concat
from dmvcr.core.numerics import matmul
from dmvcr.core.numerics import mul
from dmvcr.core.numerics import record_operation
from dmvcr.core.numerics import sigmoid
from dmvcr.core.numerics import softmax
from dmvcr.core.numerics import stable_sigmoid
from dmvcr.core.numerics import take_rows
from dmvcr.core.numerics import tanh
from dmvcr.core.numerics import transpose

BoolArray = NDArray[np.bool_]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> NDArray[np.float64]:
    """Uniform draw in ±sqrt(6 / (fan_in + fan_out)) of shape fan_in×fan_out."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass(frozen=True)
class LSTMParams:
    """Weights of one LSTM direction.

    Each weight matrix maps the concatenated ``[c, h, x]`` row (width
    ``2 * hidden_size + input_size``) to ``hidden_size`` gate pre-activations.
    """

    w_i: Tensor
    w_o: Tensor
    w_f: Tensor
    w_c: Tensor
    b_i: Tensor
    b_o: Tensor
    b_f: Tensor
    b_c: Tensor

    def __post_init__(self) -> None:
        """Check every gate shares the same input and hidden sizes."""
        expected_w = self.w_i.shape
        if len(expected_w) != 2 or expected_w[0] <= 2 * expected_w[1]:  # noqa: PLR2004
            message = f"LSTM weight shape {expected_w} is not (2*d_h + d_in)×d_h"
            raise DimensionError(message)
        for weight in (self.w_o, self.w_f, self.w_c):
            if weight.shape != expected_w:
                message = f"LSTM gate weights disagree: {expected_w} vs {weight.shape}"
                raise DimensionError(message)
        for bias in self.biases:
            if bias.shape != (1, expected_w[1]):
                message = f"LSTM bias shape {bias.shape} does not match hidden size {expected_w[1]}"
                raise DimensionError(message)

    @property
    def hidden_size(self) -> int:
        """Hidden size d_h."""
        return self.w_i.shape[1]

    @property
    def input_size(self) -> int:
        """Width of x_t."""
        return self.w_i.shape[0] - 2 * self.hidden_size

    @property
    def weights(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Gate weights in (input, output, forget, cell) order."""
        return (self.w_i, self.w_o, self.w_f, self.w_c)

    @property
    def biases(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Gate biases in (input, output, forget, cell) order."""
        return (self.b_i, self.b_o, self.b_f, self.b_c)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        """Parameters keyed by ``prefix.<name>``."""
        names = ("w_i", "w_o", "w_f", "w_c", "b_i", "b_o", "b_f", "b_c")
        return {f"{prefix}.{name}": getattr(self, name) for name in names}

    @classmethod
    def initialize(cls, rng: np.random.Generator, input_size: int, hidden_size: int) -> LSTMParams:
        """Glorot-uniform weights and zero biases."""
        fan_in = 2 * hidden_size + input_size
        weights = [
            Tensor(glorot_uniform(rng, fan_in, hidden_size), requires_grad=True) for _ in range(4)
        ]
        biases = [Tensor.zeros(1, hidden_size, requires_grad=True) for _ in range(4)]
        return cls(*weights, *biases)


@dataclass(frozen=True)
class BiLSTMParams:
    """Forward and backward LSTM directions sharing one hidden size."""

    forward: LSTMParams
    backward: LSTMParams

    def __post_init__(self) -> None:
        """Both directions must agree on their sizes."""
        if self.forward.w_i.shape != self.backward.w_i.shape:
            message = "BiLSTM directions must share input and hidden sizes"
            raise DimensionError(message)

    @property
    def hidden_size(self) -> int:
        """Per-direction hidden size d_h."""
        return self.forward.hidden_size

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        """Parameters of both directions."""
        return {
            **self.forward.named_parameters(f"{prefix}.forward"),
            **self.backward.named_parameters(f"{prefix}.backward"),
        }

    @classmethod
    def initialize(
        cls, rng: np.random.Generator, input_size: int, hidden_size: int
    ) -> BiLSTMParams:
        """Independent initialisation of both directions."""
        return cls(
            forward=LSTMParams.initialize(rng, input_size, hidden_size),
            backward=LSTMParams.initialize(rng, input_size, hidden_size),
        )


@dataclass(frozen=True)
class AttentionParams:
    """Bilinear forms for object→response (w_r) and response→query (w_q) attention."""

    w_r: Tensor
    w_q: Tensor

    def __post_init__(self) -> None:
        """w_r is d_o×2d_h and w_q is 2d_h×2d_h."""
        width = self.w_q.shape[0]
        square = self.w_q.shape == (width, width)
        if not square or len(self.w_r.shape) != 2 or self.w_r.shape[1] != width:  # noqa: PLR2004
            message = f"Attention shapes w_r={self.w_r.shape}, w_q={self.w_q.shape} do not fit"
            raise DimensionError(message)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        """Both bilinear weights."""
        return {f"{prefix}.w_r": self.w_r, f"{prefix}.w_q": self.w_q}

    @classmethod
    def initialize(
        cls, rng: np.random.Generator, object_dim: int, hidden_size: int
    ) -> AttentionParams:
        """Glorot-uniform bilinear weights."""
        width = 2 * hidden_size
        return cls(
            w_r=Tensor(glorot_uniform(rng, object_dim, width), requires_grad=True),
            w_q=Tensor(glorot_uniform(rng, width, width), requires_grad=True),
        )


@dataclass(frozen=True)
class GroundedSequence:
    """Token embeddings joined with the features of the objects they reference.

    Attributes:
        matrix: L×(d_w + d_o) rows; untagged rows carry a zero object block and
            padded rows are entirely zero.
        mask: True at real tokens.
    """

    matrix: Tensor
    mask: BoolArray


@dataclass(frozen=True)
class HiddenSequence:
    """BiLSTM states, L×2d_h, with zero rows at padded positions."""

    states: Tensor
    mask: BoolArray


@dataclass(frozen=True)
class AttentionOutput:
    """Attended features and the weights that produced them."""

    features: Tensor
    weights: Tensor


@dataclass(frozen=True)
class FusedFeatures:
    """Attention outputs fed to the encoder.

    Attributes:
        fq: One row per response position, L_r×2d_h.
        fr: One row per object, m×2d_h.
        fq_mask: Validity of the fq rows (the response mask).
        fr_mask: Validity of the fr rows (all objects are valid).
        query_weights: Response→query attention weights, L_r×L_q.
        object_weights: Object→response attention weights, m×L_r.
    """

    fq: Tensor
    fr: Tensor
    fq_mask: BoolArray
    fr_mask: BoolArray
    query_weights: Tensor | None = None
    object_weights: Tensor | None = None


# VISUAL GROUNDING


def ground(
    embeddings: Tensor,
    tags: Sequence[int | None],
    objects: Tensor,
    mask: BoolArray | None = None,
) -> GroundedSequence:
    """Concatenate each token embedding with the feature of the object it is tagged with.

    Args:
        embeddings: L×d_w token embeddings.
        tags: Object index per position, ``None`` when untagged.
        objects: m×d_o object features.
        mask: Validity per position; all valid when omitted.

    Raises:
        DimensionError: If the tag list does not align with the embedding rows.
        IndexOutOfRangeError: If a tag refers past the last object.
    """
    length = embeddings.shape[0]
    if len(tags) != length:
        message = f"{len(tags)} tags for {length} embedding rows"
        raise DimensionError(message)
    mask = np.ones(length, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    num_objects, object_dim = objects.shape
    for tag in tags:
        if tag is not None and not 0 <= tag < num_objects:
            message = f"Tag {tag} refers past the {num_objects} objects"
            raise IndexOutOfRangeError(message)
    # Row 0 of the padded table is the zero block used by untagged tokens.
    padded_objects = concat([Tensor.zeros(1, object_dim), objects], axis=0)
    object_block = take_rows(padded_objects, [0 if tag is None else tag + 1 for tag in tags])
    matrix = concat([embeddings, object_block], axis=1)
    if not mask.all():
        keep = np.repeat(mask[:, None].astype(np.float64), matrix.shape[1], axis=1)
        matrix = mul(matrix, Tensor(keep))
    return GroundedSequence(matrix=matrix, mask=mask)


# RECURRENCE


def lstm_cell(
    params: LSTMParams,
    c_prev: Tensor,
    h_prev: Tensor,
    x_t: Tensor,
) -> tuple[Tensor, Tensor]:
    """One LSTM step; returns ``(c_t, h_t)``.

    Raises:
        DimensionError: If the state or input widths disagree with ``params``.
    """
    hidden = params.hidden_size
    if c_prev.shape != (1, hidden) or h_prev.shape != (1, hidden):
        message = f"LSTM state shapes {c_prev.shape}, {h_prev.shape} do not match (1, {hidden})"
        raise DimensionError(message)
    if x_t.shape != (1, params.input_size):
        message = f"LSTM input shape {x_t.shape} does not match (1, {params.input_size})"
        raise DimensionError(message)
    z = concat([c_prev, h_prev, x_t], axis=1)
    input_gate = sigmoid(add(matmul(z, params.w_i), params.b_i))
    output_gate = sigmoid(add(matmul(z, params.w_o), params.b_o))
    forget_gate = sigmoid(add(matmul(z, params.w_f), params.b_f))
    candidate = tanh(add(matmul(z, params.w_c), params.b_c))
    c_t = add(mul(forget_gate, c_prev), mul(input_gate, candidate))
    h_t = mul(output_gate, tanh(c_t))
    return c_t, h_t


@dataclass(frozen=True, slots=True)
class _ScanStep:
    position: int
    z: NDArray[np.float64]
    c_prev: NDArray[np.float64]
    gates: NDArray[np.float64]
    candidate: NDArray[np.float64]
    squashed: NDArray[np.float64]


def lstm_scan(
    params: LSTMParams,
    inputs: Tensor,
    mask: BoolArray,
    *,
    reverse: bool = False,
) -> Tensor:
    """Scan an LSTM over the rows of ``inputs`` from a zero state.

    Computes the same recurrence as chained :func:`lstm_cell` calls, recorded as
    a single operation whose backward pass runs through time. Masked rows leave
    the state untouched and get a zero output row.

    Returns:
        Tensor: L×d_h hidden states in position order.

    Raises:
        DimensionError: If the rows or the mask do not fit ``params``.
    """
    if len(inputs.shape) != 2 or inputs.shape[1] != params.input_size:  # noqa: PLR2004
        message = f"LSTM inputs of shape {inputs.shape} do not have width {params.input_size}"
        raise DimensionError(message)
    length = inputs.shape[0]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (length,):
        message = f"LSTM mask of shape {mask.shape} does not match {length} rows"
        raise DimensionError(message)
    hidden = params.hidden_size
    weights = np.concatenate([weight.data for weight in params.weights], axis=1)
    bias = np.concatenate([term.data for term in params.biases], axis=1)
    c = np.zeros((1, hidden))
    h = np.zeros((1, hidden))
    states = np.zeros((length, hidden))
    steps: list[_ScanStep] = []
    positions = range(length - 1, -1, -1) if reverse else range(length)
    for t in positions:
        if not mask[t]:
            continue
        z = np.concatenate([c, h, inputs.data[t : t + 1]], axis=1)
        pre = z @ weights + bias
        # Gate order: input, output, forget, then the cell candidate.
        gates = stable_sigmoid(pre[:, : 3 * hidden])
        candidate = np.tanh(pre[:, 3 * hidden :])
        c_next = gates[:, 2 * hidden :] * c + gates[:, :hidden] * candidate
        squashed = np.tanh(c_next)
        h = gates[:, hidden : 2 * hidden] * squashed
        steps.append(_ScanStep(t, z, c, gates, candidate, squashed))
        c = c_next
        states[t] = h[0]

    def rule(grad: FloatArray) -> tuple[FloatArray, ...]:
        d_weights = np.zeros_like(weights)
        d_bias = np.zeros_like(bias)
        d_inputs = np.zeros(inputs.shape)
        dh_next = np.zeros((1, hidden))
        dc_next = np.zeros((1, hidden))
        for step in reversed(steps):
            input_gate = step.gates[:, :hidden]
            output_gate = step.gates[:, hidden : 2 * hidden]
            forget_gate = step.gates[:, 2 * hidden :]
            dh = grad[step.position : step.position + 1] + dh_next
            dc = dc_next + dh * output_gate * (1.0 - step.squashed * step.squashed)
            d_pre = np.concatenate(
                [
                    dc * step.candidate * input_gate * (1.0 - input_gate),
                    dh * step.squashed * output_gate * (1.0 - output_gate),
                    dc * step.c_prev * forget_gate * (1.0 - forget_gate),
                    dc * input_gate * (1.0 - step.candidate * step.candidate),
                ],
                axis=1,
            )
            d_weights += step.z.T @ d_pre
            d_bias += d_pre
            d_z = d_pre @ weights.T
            dc_next = dc * forget_gate + d_z[:, :hidden]
            dh_next = d_z[:, hidden : 2 * hidden]
            d_inputs[step.position] = d_z[0, 2 * hidden :]
        return (d_inputs, *np.split(d_weights, 4, axis=1), *np.split(d_bias, 4, axis=1))

    return record_operation("lstm_scan", states, (inputs, *params.weights, *params.biases), rule)


def bilstm_forward(params: BiLSTMParams, grounded: GroundedSequence) -> HiddenSequence:
    """Contextualise a grounded sequence in both directions.

    Row t is ``concat(forward_h_t, backward_h_t)``; padded rows are zero.

    Raises:
        ContractError: If the sequence is empty.
    """
    length = grounded.matrix.shape[0]
    if length < 1:
        message = "bilstm_forward needs at least one position"
        raise ContractError(message)
    forward_states = lstm_scan(params.forward, grounded.matrix, grounded.mask)
    backward_states = lstm_scan(params.backward, grounded.matrix, grounded.mask, reverse=True)
    states = concat([forward_states, backward_states], axis=1)
    return HiddenSequence(states=states, mask=grounded.mask)


# ATTENTION


def _attend(scores: Tensor, mask: BoolArray, values: Tensor, label: str) -> AttentionOutput:
    if not mask.any():
        message = f"{label}: every attended position is masked"
        raise ContractError(message)
    if not mask.all():
        additive = np.where(mask, 0.0, MASK_VALUE)
        scores = add(scores, Tensor(np.tile(additive, (scores.shape[0], 1))))
    weights = softmax(scores, axis=1)
    return AttentionOutput(features=matmul(weights, values), weights=weights)


def object_response_attention(
    objects: Tensor,
    h_r: HiddenSequence,
    params: AttentionParams,
) -> AttentionOutput:
    """Each object attends over the response positions.

    ``s_ij = o_i W_r h_rj``; weights are a softmax over j with padding excluded;
    output row i is ``sum_j alpha_ij h_rj``.

    Raises:
        DimensionError: If the object or hidden widths do not fit ``w_r``.
        ContractError: If every response position is masked.
    """
    if objects.shape[1] != params.w_r.shape[0] or h_r.states.shape[1] != params.w_r.shape[1]:
        message = (
            f"object_response_attention: objects {objects.shape} and states "
            f"{h_r.states.shape} do not fit w_r {params.w_r.shape}"
        )
        raise DimensionError(message)
    scores = matmul(matmul(objects, params.w_r), transpose(h_r.states))
    return _attend(scores, h_r.mask, h_r.states, "object_response_attention")


def response_query_attention(
    h_r: HiddenSequence,
    h_q: HiddenSequence,
    params: AttentionParams,
) -> AttentionOutput:
    """Each response position attends over the query positions.

    ``s_ij = h_ri W_q h_qj``; output row i is ``sum_j alpha_ij h_qj``.

    Raises:
        DimensionError: If the hidden widths do not fit ``w_q``.
        ContractError: If every query position is masked.
    """
    width = params.w_q.shape[0]
    if h_r.states.shape[1] != width or h_q.states.shape[1] != width:
        message = (
            f"response_query_attention: states {h_r.states.shape} and {h_q.states.shape} "
            f"do not fit w_q {params.w_q.shape}"
        )
        raise DimensionError(message)
    scores = matmul(matmul(h_r.states, params.w_q), transpose(h_q.states))
    return _attend(scores, h_q.mask, h_q.states, "response_query_attention")


def fuse(
    objects: Tensor,
    h_q: HiddenSequence,
    h_r: HiddenSequence,
    params: AttentionParams,
) -> FusedFeatures:
    """Run both attention modules and package their outputs for the encoder."""
    object_side = object_response_attention(objects, h_r, params)
    query_side = response_query_attention(h_r, h_q, params)
    return FusedFeatures(
        fq=query_side.features,
        fr=object_side.features,
        fq_mask=h_r.mask,
        fr_mask=np.ones(objects.shape[0], dtype=bool),
        query_weights=query_side.weights,
        object_weights=object_side.weights,
    )
