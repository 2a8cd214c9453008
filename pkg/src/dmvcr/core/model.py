"""End-to-end scorer: four candidates share every parameter and are normalised jointly."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray

from dmvcr.core.datamodel import NUM_CHOICES
from dmvcr.core.datamodel import TaggedSequence
from dmvcr.core.datamodel import TaskInstance
from dmvcr.core.datamodel import Vocabulary
from dmvcr.core.datamodel import embed_tokens
from dmvcr.core.encoder import DictionaryMemory
from dmvcr.core.encoder import encode
from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DimensionError
from dmvcr.core.exceptions import IndexOutOfRangeError
from dmvcr.core.fusion import AttentionParams
from dmvcr.core.fusion import BiLSTMParams
from dmvcr.core.fusion import HiddenSequence
from dmvcr.core.fusion import LSTMParams
from dmvcr.core.fusion import bilstm_forward
from dmvcr.core.fusion import fuse
from dmvcr.core.fusion import glorot_uniform
from dmvcr.core.fusion import ground
from dmvcr.core.numerics import ReduceOp
from dmvcr.core.numerics import Tensor
from dmvcr.core.numerics import add
from dmvcr.core.numerics import concat
from dmvcr.core.numerics import cross_entropy_logits
from dmvcr.core.numerics import matmul
from dmvcr.core.numerics import no_grad
from dmvcr.core.numerics import reduce
from dmvcr.core.numerics import reshape
from dmvcr.core.numerics import softmax
from dmvcr.core.numerics import tanh

if TYPE_CHECKING:
    from dmvcr.utils.settings import RunConfig

logger = logging.getLogger(__name__)

DICTIONARY_GROUP = "dictionary"
BASE_GROUP = "base"
DICTIONARY_PARAMETER = "memory.d"


@dataclass(frozen=True)
class MLPHead:
    """Two-layer perceptron mapping the 1×2d_e context to one logit.

    ``logit = tanh(context w1 + b1) w2 + b2``
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __post_init__(self) -> None:
        """Layer shapes must chain to a single output."""
        hidden = self.w1.shape[1]
        if self.b1.shape != (1, hidden) or self.w2.shape != (hidden, 1) or self.b2.shape != (1, 1):
            message = (
                f"Head shapes w1={self.w1.shape}, b1={self.b1.shape}, "
                f"w2={self.w2.shape}, b2={self.b2.shape} do not chain"
            )
            raise DimensionError(message)

    @property
    def input_size(self) -> int:
        """Context width 2d_e."""
        return self.w1.shape[0]

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        """The four head tensors keyed by ``prefix.<name>``."""
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }

    def __call__(self, context: Tensor) -> Tensor:
        """Logit for one 1×2d_e context."""
        if context.shape != (1, self.input_size):
            message = f"Head expects a (1, {self.input_size}) context, got {context.shape}"
            raise DimensionError(message)
        hidden = tanh(add(matmul(context, self.w1), self.b1))
        return add(matmul(hidden, self.w2), self.b2)

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        input_size: int,
        hidden_size: int,
        *,
        zero_output: bool = True,
    ) -> MLPHead:
        """Glorot-uniform weights, zero biases; optionally a zero output layer.

        The output weights are drawn even when zeroed so the random stream is
        the same either way.
        """
        w1 = glorot_uniform(rng, input_size, hidden_size)
        w2 = glorot_uniform(rng, hidden_size, 1)
        if zero_output:
            w2 = np.zeros_like(w2)
        return cls(
            w1=Tensor(w1, requires_grad=True),
            b1=Tensor.zeros(1, hidden_size, requires_grad=True),
            w2=Tensor(w2, requires_grad=True),
            b2=Tensor.zeros(1, 1, requires_grad=True),
        )


@dataclass(frozen=True)
class ModelParams:
    """Every trainable tensor of the model plus the switches that shape its forward pass.

    Attributes:
        vocabulary: Token index space of ``embedding``.
        embedding: V×d_w token table.
        fusion: BiLSTM shared by the query and the responses.
        attention: Bilinear attention weights.
        encoder: Unidirectional LSTM over the fused rows (input 2d_h, hidden d_e).
        memory: The d_e×k dictionary.
        head: Prediction perceptron.
        dictionary_enabled: When false the dictionary readout is zero.
        literal_encoder_input: Feed fq twice to the encoder.
        max_seq_len: Longest accepted query or response.
    """

    vocabulary: Vocabulary
    embedding: Tensor
    fusion: BiLSTMParams
    attention: AttentionParams
    encoder: LSTMParams
    memory: DictionaryMemory
    head: MLPHead
    dictionary_enabled: bool = True
    literal_encoder_input: bool = False
    max_seq_len: int | None = None

    def __post_init__(self) -> None:
        """Check that the components fit together."""
        if self.embedding.shape[0] != len(self.vocabulary):
            message = (
                f"Embedding table has {self.embedding.shape[0]} rows for "
                f"{len(self.vocabulary)} words"
            )
            raise DimensionError(message)
        if self.encoder.input_size != 2 * self.fusion.hidden_size:
            message = "Encoder input size must be twice the BiLSTM hidden size"
            raise DimensionError(message)
        if self.memory.width != self.encoder.hidden_size:
            message = "Dictionary entries must be as wide as the encoder state"
            raise DimensionError(message)
        if self.head.input_size != 2 * self.encoder.hidden_size:
            message = "Head input must be twice the encoder hidden size"
            raise DimensionError(message)

    @property
    def word_dim(self) -> int:
        """Embedding width d_w."""
        return self.embedding.shape[1]

    @property
    def object_dim(self) -> int:
        """Object feature width d_o."""
        return self.attention.w_r.shape[0]

    def named_parameters(self) -> dict[str, Tensor]:
        """All trainable tensors in a fixed order."""
        return {
            "embedding": self.embedding,
            **self.fusion.named_parameters("fusion"),
            **self.attention.named_parameters("attention"),
            **self.encoder.named_parameters("encoder"),
            DICTIONARY_PARAMETER: self.memory.d,
            **self.head.named_parameters("head"),
        }

    def parameter_groups(self) -> dict[str, list[str]]:
        """Optimizer groups: the dictionary alone, and everything else."""
        names = list(self.named_parameters())
        return {
            DICTIONARY_GROUP: [DICTIONARY_PARAMETER],
            BASE_GROUP: [name for name in names if name != DICTIONARY_PARAMETER],
        }

    def num_parameters(self) -> int:
        """Total number of scalar parameters."""
        return sum(tensor.data.size for tensor in self.named_parameters().values())

    def zero_grad(self) -> None:
        """Reset every gradient accumulator."""
        for tensor in self.named_parameters().values():
            tensor.zero_grad()


def initialize_params(
    vocabulary: Vocabulary,
    config: RunConfig,
    seed: int | None = None,
) -> ModelParams:
    """Draw fresh parameters for ``config``.

    The draws do not depend on ``dictionary_enabled``, so two configs that differ
    only in that flag start from identical parameters.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    encoder_dim = config.effective_encoder_dim
    embedding = Tensor(
        glorot_uniform(rng, len(vocabulary), config.word_dim), requires_grad=True, name="embedding"
    )
    fusion = BiLSTMParams.initialize(rng, config.word_dim + config.object_dim, config.hidden_dim)
    attention = AttentionParams.initialize(rng, config.object_dim, config.hidden_dim)
    encoder = LSTMParams.initialize(rng, 2 * config.hidden_dim, encoder_dim)
    memory = DictionaryMemory.initialize(rng, encoder_dim, config.dictionary_size)
    head = MLPHead.initialize(
        rng, 2 * encoder_dim, config.mlp_dim, zero_output=config.zero_head_init
    )
    params = ModelParams(
        vocabulary=vocabulary,
        embedding=embedding,
        fusion=fusion,
        attention=attention,
        encoder=encoder,
        memory=memory,
        head=head,
        dictionary_enabled=config.dictionary_enabled,
        literal_encoder_input=config.literal_encoder_input,
        max_seq_len=config.max_seq_len,
    )
    logger.debug("Initialised %d parameters", params.num_parameters())
    return params


# FORWARD PASS


@dataclass(frozen=True)
class CandidateTrace:
    """Scoring of one candidate, with the intermediate weights kept for inspection."""

    logit: Tensor
    alpha: Tensor | None
    query_weights: Tensor | None
    object_weights: Tensor | None


@dataclass(frozen=True)
class Prediction:
    """Output of :func:`predict`.

    Attributes:
        distribution: Probability of each of the four candidates.
        choice: Index of the most probable candidate, lowest index on ties.
        alphas: Dictionary key weights per candidate (``None`` when disabled).
        query_weights: Response→query attention per candidate.
        object_weights: Object→response attention per candidate.
    """

    distribution: NDArray[np.float64]
    choice: int
    alphas: tuple[NDArray[np.float64] | None, ...]
    query_weights: tuple[NDArray[np.float64] | None, ...]
    object_weights: tuple[NDArray[np.float64] | None, ...]


def _check_length(params: ModelParams, sequence: TaggedSequence, label: str) -> None:
    if params.max_seq_len is not None and len(sequence) > params.max_seq_len:
        message = f"{label} has {len(sequence)} tokens, more than max_seq_len={params.max_seq_len}"
        raise ContractError(message)


def contextualise(
    params: ModelParams,
    sequence: TaggedSequence,
    objects: Tensor,
) -> HiddenSequence:
    """Embed, ground and run the shared BiLSTM over one sequence."""
    embeddings = embed_tokens(params.vocabulary.encode(sequence.tokens), params.embedding)
    grounded = ground(embeddings, sequence.tags, objects, sequence.mask)
    return bilstm_forward(params.fusion, grounded)


def _objects_tensor(params: ModelParams, instance: TaskInstance) -> Tensor:
    if instance.objects.feature_dim != params.object_dim:
        message = (
            f"Object features have dimension {instance.objects.feature_dim}, "
            f"the model expects {params.object_dim}"
        )
        raise DimensionError(message)
    return Tensor(instance.objects.as_array())


def _trace_candidate(
    params: ModelParams,
    objects: Tensor,
    h_q: HiddenSequence,
    response: TaggedSequence,
) -> CandidateTrace:
    h_r = contextualise(params, response, objects)
    fused = fuse(objects, h_q, h_r, params.attention)
    encoded = encode(
        params.encoder,
        params.memory,
        fused,
        dictionary_enabled=params.dictionary_enabled,
        literal=params.literal_encoder_input,
    )
    return CandidateTrace(
        logit=params.head(encoded.context),
        alpha=encoded.alpha,
        query_weights=fused.query_weights,
        object_weights=fused.object_weights,
    )


def _prepare(params: ModelParams, instance: TaskInstance) -> tuple[Tensor, HiddenSequence]:
    _check_length(params, instance.query, "Query")
    for position, response in enumerate(instance.responses):
        _check_length(params, response, f"Response {position}")
    objects = _objects_tensor(params, instance)
    return objects, contextualise(params, instance.query, objects)


def score_candidate(params: ModelParams, instance: TaskInstance, candidate_index: int) -> Tensor:
    """Logit (1×1) of one candidate response.

    Raises:
        IndexOutOfRangeError: If ``candidate_index`` is not in 0..3.
    """
    if not 0 <= candidate_index < NUM_CHOICES:
        message = f"candidate_index {candidate_index} outside 0..{NUM_CHOICES - 1}"
        raise IndexOutOfRangeError(message)
    objects, h_q = _prepare(params, instance)
    return _trace_candidate(params, objects, h_q, instance.responses[candidate_index]).logit


def trace_candidates(params: ModelParams, instance: TaskInstance) -> list[CandidateTrace]:
    """Score all four candidates; the query is contextualised once and shared."""
    objects, h_q = _prepare(params, instance)
    return [_trace_candidate(params, objects, h_q, response) for response in instance.responses]


def candidate_logits(params: ModelParams, instance: TaskInstance) -> Tensor:
    """The four logits as a 1×4 row."""
    return concat([trace.logit for trace in trace_candidates(params, instance)], axis=1)


def _array_or_none(tensor: Tensor | None) -> NDArray[np.float64] | None:
    return None if tensor is None else tensor.numpy()


def predict(params: ModelParams, instance: TaskInstance) -> Prediction:
    """Softmax over the four logits and the chosen candidate, evaluated without a graph."""
    with no_grad():
        traces = trace_candidates(params, instance)
        logits = concat([trace.logit for trace in traces], axis=1)
        distribution = softmax(logits, axis=1).numpy().reshape(-1)
    return Prediction(
        distribution=distribution,
        choice=int(np.argmax(distribution)),
        alphas=tuple(_array_or_none(trace.alpha) for trace in traces),
        query_weights=tuple(_array_or_none(trace.query_weights) for trace in traces),
        object_weights=tuple(_array_or_none(trace.object_weights) for trace in traces),
    )


def loss(params: ModelParams, instance: TaskInstance) -> Tensor:
    """Four-way cross-entropy against the gold candidate."""
    return cross_entropy_logits(candidate_logits(params, instance), instance.gold)


def batch_loss(params: ModelParams, instances: Sequence[TaskInstance]) -> Tensor:
    """Mean of the per-instance losses.

    Raises:
        ContractError: If ``instances`` is empty.
    """
    if not instances:
        message = "batch_loss needs at least one instance"
        raise ContractError(message)
    losses = [reshape(loss(params, instance), (1, 1)) for instance in instances]
    return reduce(ReduceOp.MEAN, concat(losses, axis=0))
