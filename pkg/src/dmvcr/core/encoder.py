"""Encoder layer: an LSTM over the fused features and the working-memory dictionary."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DimensionError
from dmvcr.core.fusion import FusedFeatures
from dmvcr.core.fusion import LSTMParams
from dmvcr.core.fusion import lstm_scan
from dmvcr.core.numerics import Tensor
from dmvcr.core.numerics import concat
from dmvcr.core.numerics import matmul
from dmvcr.core.numerics import softmax
from dmvcr.core.numerics import take_rows
from dmvcr.core.numerics import transpose


@dataclass(frozen=True)
class DictionaryMemory:
    """The trainable d_e×k dictionary; column j is entry d_j."""

    d: Tensor

    def __post_init__(self) -> None:
        """The dictionary is a non-empty matrix."""
        if len(self.d.shape) != 2 or self.d.shape[0] < 1 or self.d.shape[1] < 1:  # noqa: PLR2004
            message = f"Dictionary must be a d_e×k matrix with k >= 1, got {self.d.shape}"
            raise DimensionError(message)

    @property
    def width(self) -> int:
        """Entry width d_e."""
        return self.d.shape[0]

    @property
    def size(self) -> int:
        """Number of entries k."""
        return self.d.shape[1]

    @classmethod
    def initialize(cls, rng: np.random.Generator, width: int, size: int) -> DictionaryMemory:
        """Gaussian entries with mean 0 and standard deviation 1/sqrt(d_e)."""
        values = rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, size))
        return cls(d=Tensor(values, requires_grad=True, name="dictionary"))


@dataclass(frozen=True)
class EncodedContext:
    """Encoder output for one candidate.

    Attributes:
        h: Last encoder hidden state, 1×d_e.
        h_hat: Dictionary readout, 1×d_e (zeros when the dictionary is disabled).
        alpha: Key weights over dictionary entries, 1×k (``None`` when disabled).
        context: ``concat(h, h_hat)``, 1×2d_e.
    """

    h: Tensor
    h_hat: Tensor
    alpha: Tensor | None
    context: Tensor


def encoder_inputs(fused: FusedFeatures, *, literal: bool = False) -> tuple[Tensor, np.ndarray]:
    """Rows fed to the encoder LSTM and their validity mask.

    The sequence is the rows of fq followed by the rows of fr. With ``literal``
    the rows of fq are fed twice instead.
    """
    if fused.fq.shape[1] != fused.fr.shape[1]:
        message = f"fq width {fused.fq.shape[1]} differs from fr width {fused.fr.shape[1]}"
        raise DimensionError(message)
    if literal:
        return concat([fused.fq, fused.fq], axis=0), np.concatenate([fused.fq_mask, fused.fq_mask])
    return concat([fused.fq, fused.fr], axis=0), np.concatenate([fused.fq_mask, fused.fr_mask])


def encode_sequence(params: LSTMParams, fused: FusedFeatures, *, literal: bool = False) -> Tensor:
    """Run a unidirectional LSTM over the fused sequence and return its last hidden state.

    Raises:
        ContractError: If the fused sequence has no valid row.
        DimensionError: If the row width does not match ``params``.
    """
    inputs, mask = encoder_inputs(fused, literal=literal)
    if not mask.any():
        message = "encode_sequence: the fused sequence is empty"
        raise ContractError(message)
    last = int(np.flatnonzero(mask)[-1])
    return take_rows(lstm_scan(params, inputs, mask), [last])


def dictionary_lookup(h: Tensor, memory: DictionaryMemory) -> tuple[Tensor, Tensor]:
    """Soft read of the dictionary keyed by ``h``.

    ``alpha = softmax(D^T h)`` and ``h_hat = D alpha``, both returned as rows.

    Returns:
        tuple[Tensor, Tensor]: ``(h_hat, alpha)`` of shapes 1×d_e and 1×k.

    Raises:
        DimensionError: If ``h`` is not a 1×d_e row.
    """
    if h.shape != (1, memory.width):
        message = f"dictionary_lookup: h shape {h.shape} does not match (1, {memory.width})"
        raise DimensionError(message)
    alpha = softmax(matmul(h, memory.d), axis=1)
    h_hat = matmul(alpha, transpose(memory.d))
    return h_hat, alpha


def combine_context(h: Tensor, h_hat: Tensor) -> Tensor:
    """Concatenate the hidden state with the memory readout.

    Raises:
        DimensionError: If the widths differ.
    """
    if h.shape != h_hat.shape:
        message = f"combine_context: widths {h.shape} and {h_hat.shape} differ"
        raise DimensionError(message)
    return concat([h, h_hat], axis=1)


def encode(
    params: LSTMParams,
    memory: DictionaryMemory,
    fused: FusedFeatures,
    *,
    dictionary_enabled: bool = True,
    literal: bool = False,
) -> EncodedContext:
    """Encoder layer for one candidate: LSTM, dictionary read, context."""
    h = encode_sequence(params, fused, literal=literal)
    if dictionary_enabled:
        h_hat, alpha = dictionary_lookup(h, memory)
    else:
        h_hat, alpha = Tensor.zeros(1, memory.width), None
    return EncodedContext(h=h, h_hat=h_hat, alpha=alpha, context=combine_context(h, h_hat))
