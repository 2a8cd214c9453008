"""Vocabulary, tagged token sequences, task instances and the synthetic scene generator."""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Iterable
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field
from enum import StrEnum
from pathlib import Path

import numpy as np
import pydantic
from numpy.typing import NDArray
from pydantic import BaseModel
from pydantic import ConfigDict

from dmvcr.core.exceptions import ConfigurationError
from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DatasetParseError
from dmvcr.core.exceptions import ValidationError
from dmvcr.core.numerics import Tensor
from dmvcr.core.numerics import take_rows

logger = logging.getLogger(__name__)

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
SEP_TOKEN = "[SEP]"
NUM_CHOICES = 4
DEFAULT_MAX_OBJECTS = 4
DEFAULT_MAX_SEQ_LEN = 12

_TAG_PATTERN = re.compile(r"^\[(\d+)\]$")

FILLER_WORDS = ("the", "here", "now", "please")
ANSWER_PREFIX = ("it", "is")
RATIONALE_PREFIX = ("because",)
MAX_FILLERS = 2


class TaskKind(StrEnum):
    """Which of the two multiple-choice subtasks an instance belongs to."""

    ANSWERING = "answering"
    RATIONALE = "rationale"


def tag_token(index: int) -> str:
    """Token that refers to object ``index``, e.g. ``[0]``."""
    return f"[{index}]"


def parse_tag_token(token: str) -> int | None:
    """Object index referenced by a tag token, ``None`` for ordinary words."""
    match = _TAG_PATTERN.match(token)
    return int(match.group(1)) if match else None


def reserved_tokens(max_objects: int = DEFAULT_MAX_OBJECTS) -> tuple[str, ...]:
    """Reserved tokens in index order: PAD, UNK, SEP, then one tag per object slot."""
    return (PAD_TOKEN, UNK_TOKEN, SEP_TOKEN, *(tag_token(i) for i in range(max_objects)))


@dataclass(frozen=True)
class Vocabulary:
    """Dense word ↔ index mapping; PAD is always index 0."""

    words: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Build the reverse index and check the vocabulary is well formed."""
        if not self.words or self.words[0] != PAD_TOKEN:
            message = f"Vocabulary must start with {PAD_TOKEN}"
            raise ValidationError(message)
        if UNK_TOKEN not in self.words:
            message = f"Vocabulary must contain {UNK_TOKEN}"
            raise ValidationError(message)
        if len(set(self.words)) != len(self.words):
            message = "Vocabulary contains duplicate words"
            raise ValidationError(message)
        object.__setattr__(self, "_index", {word: i for i, word in enumerate(self.words)})

    def __len__(self) -> int:
        """Number of words, reserved tokens included."""
        return len(self.words)

    def __contains__(self, word: object) -> bool:
        """Whether ``word`` has its own index."""
        return word in self._index

    def lookup(self, word: str) -> int:
        """Index of ``word``, or of UNK when the word is unknown."""
        return self._index.get(word, self._index[UNK_TOKEN])

    def word(self, index: int) -> str:
        """Word stored at ``index``."""
        return self.words[index]

    def encode(self, tokens: Sequence[str]) -> NDArray[np.intp]:
        """Indices of ``tokens`` with UNK substitution."""
        return np.array([self.lookup(token) for token in tokens], dtype=np.intp)


def build_vocab(
    instances: Iterable[TaskInstance],
    max_objects: int = DEFAULT_MAX_OBJECTS,
) -> Vocabulary:
    """Reserved tokens followed by the sorted set of corpus words."""
    reserved = reserved_tokens(max_objects)
    words: set[str] = set()
    for instance in instances:
        for sequence in (instance.query, *instance.responses):
            words.update(sequence.tokens)
    words.difference_update(reserved)
    return Vocabulary(words=(*reserved, *sorted(words)))


def save_vocabulary(vocabulary: Vocabulary, path: Path) -> None:
    """Write one token per line; the line number is the index."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{word}\n" for word in vocabulary.words), encoding="utf-8")


def load_vocabulary(path: Path) -> Vocabulary:
    """Read a vocabulary written by :func:`save_vocabulary`."""
    return Vocabulary(words=tuple(path.read_text(encoding="utf-8").splitlines()))


def embed_tokens(token_ids: Sequence[int] | NDArray[np.intp], table: Tensor) -> Tensor:
    """Rows of the embedding table for each token, shape L×d_w.

    Raises:
        IndexOutOfRangeError: If a token index is not below the table size.
    """
    return take_rows(table, token_ids)


@dataclass(frozen=True)
class ObjectSet:
    """Feature vectors of the objects in one scene."""

    features: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        """Check there is at least one object and all share a dimension."""
        if not self.features:
            message = "A scene needs at least one object"
            raise ValidationError(message)
        if len({len(vector) for vector in self.features}) != 1:
            message = "All object feature vectors must share one dimension"
            raise ValidationError(message)

    def __len__(self) -> int:
        """Number of objects m."""
        return len(self.features)

    @property
    def feature_dim(self) -> int:
        """Dimension d_o of each feature vector."""
        return len(self.features[0])

    def as_array(self) -> NDArray[np.float64]:
        """Features as an m×d_o array."""
        return np.array(self.features, dtype=np.float64)

    @classmethod
    def from_array(cls, array: NDArray[np.float64]) -> ObjectSet:
        """Build from an m×d_o array."""
        return cls(features=tuple(tuple(float(value) for value in row) for row in array))


@dataclass(frozen=True)
class TaggedSequence:
    """Tokens with a parallel list of object references (``None`` when untagged)."""

    tokens: tuple[str, ...]
    tags: tuple[int | None, ...]

    def __post_init__(self) -> None:
        """Check lengths and that tag tokens point at their own object."""
        if not self.tokens:
            message = "A tagged sequence needs at least one token"
            raise ValidationError(message)
        if len(self.tokens) != len(self.tags):
            message = f"{len(self.tokens)} tokens but {len(self.tags)} tags"
            raise ValidationError(message)
        for token, tag in zip(self.tokens, self.tags, strict=True):
            if tag is not None and tag < 0:
                message = f"Negative tag {tag} on token {token!r}"
                raise ValidationError(message)
            referenced = parse_tag_token(token)
            if referenced is not None and tag != referenced:
                message = f"Tag token {token!r} must carry tag {referenced}, got {tag}"
                raise ValidationError(message)

    def __len__(self) -> int:
        """Sequence length L."""
        return len(self.tokens)

    @property
    def mask(self) -> NDArray[np.bool_]:
        """True at real tokens, False at padding."""
        return np.array([token != PAD_TOKEN for token in self.tokens], dtype=bool)

    @classmethod
    def untagged(cls, tokens: Sequence[str]) -> TaggedSequence:
        """Sequence whose tags are all ``None`` except for tag tokens."""
        return cls(tokens=tuple(tokens), tags=tuple(parse_tag_token(token) for token in tokens))


@dataclass(frozen=True)
class TaskInstance:
    """One multiple-choice problem: a scene, a query and four candidate responses."""

    objects: ObjectSet
    query: TaggedSequence
    responses: tuple[TaggedSequence, ...]
    gold: int
    kind: TaskKind

    def __post_init__(self) -> None:
        """Enforce four responses, a valid gold index and in-range tags."""
        if len(self.responses) != NUM_CHOICES:
            message = f"Expected {NUM_CHOICES} responses, got {len(self.responses)}"
            raise ValidationError(message)
        if not 0 <= self.gold < NUM_CHOICES:
            message = f"Gold index {self.gold} outside 0..{NUM_CHOICES - 1}"
            raise ValidationError(message)
        for sequence in (self.query, *self.responses):
            for tag in sequence.tags:
                if tag is not None and tag >= len(self.objects):
                    message = f"Tag {tag} refers past the {len(self.objects)} objects"
                    raise ValidationError(message)
        if self.kind is TaskKind.RATIONALE and SEP_TOKEN not in self.query.tokens:
            message = "A rationale query must contain the question, a separator and the answer"
            raise ValidationError(message)


# SYNTHETIC WORLD


@dataclass(frozen=True)
class SyntheticWorld:
    """Global fact table shared by every generated scene.

    ``facts[a][r]`` is the index of the answer word for attribute ``a`` under
    relation ``r``; the table is a seeded random bijection onto
    ``ans_0 .. ans_{A*R-1}``, so answers cannot be read off token names.
    """

    num_attributes: int
    num_relations: int
    noise: float
    feature_dim: int
    max_objects: int
    seed: int
    facts: tuple[tuple[int, ...], ...]

    @classmethod
    def create(  # noqa: PLR0913
        cls,
        *,
        num_attributes: int,
        num_relations: int,
        noise: float = 0.0,
        feature_dim: int | None = None,
        max_objects: int = DEFAULT_MAX_OBJECTS,
        seed: int = 0,
    ) -> SyntheticWorld:
        """Draw the fact table for a world.

        Raises:
            ConfigurationError: If the sizes cannot describe a scene.
        """
        feature_dim = num_attributes if feature_dim is None else feature_dim
        if num_attributes < 1 or num_relations < 1:
            message = "A world needs at least one attribute and one relation"
            raise ConfigurationError(message)
        if feature_dim < num_attributes:
            message = f"feature_dim {feature_dim} cannot one-hot encode {num_attributes} attributes"
            raise ConfigurationError(message)
        if max_objects < 2:  # noqa: PLR2004
            message = f"max_objects must be at least 2, got {max_objects}"
            raise ConfigurationError(message)
        if noise < 0:
            message = f"noise must be non-negative, got {noise}"
            raise ConfigurationError(message)
        rng = np.random.default_rng(seed)
        permutation = rng.permutation(num_attributes * num_relations)
        facts = tuple(
            tuple(int(permutation[a * num_relations + r]) for r in range(num_relations))
            for a in range(num_attributes)
        )
        return cls(
            num_attributes=num_attributes,
            num_relations=num_relations,
            noise=noise,
            feature_dim=feature_dim,
            max_objects=max_objects,
            seed=seed,
            facts=facts,
        )

    @property
    def num_facts(self) -> int:
        """Size A·R of the fact table."""
        return self.num_attributes * self.num_relations

    def answer_word(self, attribute: int, relation: int) -> str:
        """Answer token for a fact."""
        return f"ans_{self.facts[attribute][relation]}"

    @staticmethod
    def fact_word(attribute: int, relation: int) -> str:
        """Rationale token naming a fact."""
        return f"fact_{attribute}_{relation}"

    @staticmethod
    def relation_word(relation: int) -> str:
        """Question token for a relation."""
        return f"rel_{relation}"

    def oracle_choice(self, instance: TaskInstance) -> int | None:
        """Index of the response a solver knowing the fact table would pick.

        Reads the relation and the tagged object from the question, takes the
        object's attribute as the largest feature, and returns the first
        response that names the matching fact (``None`` if none does).

        Raises:
            ContractError: If the question names no relation or tags no object.
        """
        relation_token = next(
            (token for token in instance.query.tokens if token.startswith("rel_")), None
        )
        if relation_token is None:
            message = f"oracle_choice: no relation token in query {instance.query.tokens}"
            raise ContractError(message)
        relation = int(relation_token.removeprefix("rel_"))
        obj = next((tag for tag in instance.query.tags if tag is not None), None)
        if obj is None:
            message = f"oracle_choice: query {instance.query.tokens} tags no object"
            raise ContractError(message)
        attribute = int(np.argmax(instance.objects.as_array()[obj][: self.num_attributes]))
        if instance.kind is TaskKind.ANSWERING:
            expected = self.answer_word(attribute, relation)
        else:
            expected = self.fact_word(attribute, relation)
        for index, response in enumerate(instance.responses):
            if expected in response.tokens:
                return index
        return None


@dataclass(frozen=True)
class _Scene:
    features: NDArray[np.float64]
    attributes: NDArray[np.intp]
    relation: int
    target: int
    fillers: tuple[str, ...]
    answer_gold: int
    answer_distractors: NDArray[np.intp]
    rationale_gold: int
    rationale_distractors: NDArray[np.intp]


def _draw_scene(world: SyntheticWorld, rng: np.random.Generator) -> _Scene:
    # Same number of draws for every kind, so kinds generated with one seed pair up.
    num_objects = int(rng.integers(2, world.max_objects + 1))
    attributes = rng.integers(0, world.num_attributes, size=num_objects)
    noise = rng.normal(0.0, 1.0, size=(num_objects, world.feature_dim))
    features = np.zeros((num_objects, world.feature_dim))
    features[np.arange(num_objects), attributes] = 1.0
    features = features + world.noise * noise
    relation = int(rng.integers(0, world.num_relations))
    target = int(rng.integers(0, num_objects))
    num_fillers = int(rng.integers(0, MAX_FILLERS + 1))
    fillers = tuple(FILLER_WORDS[i] for i in rng.integers(0, len(FILLER_WORDS), size=num_fillers))
    gold_fact = int(attributes[target]) * world.num_relations + relation
    others = np.array([fact for fact in range(world.num_facts) if fact != gold_fact])
    answer_gold = int(rng.integers(0, NUM_CHOICES))
    answer_distractors = rng.choice(others, size=NUM_CHOICES - 1, replace=False)
    rationale_gold = int(rng.integers(0, NUM_CHOICES))
    rationale_distractors = rng.choice(others, size=NUM_CHOICES - 1, replace=False)
    return _Scene(
        features=features,
        attributes=attributes,
        relation=relation,
        target=target,
        fillers=fillers,
        answer_gold=answer_gold,
        answer_distractors=answer_distractors,
        rationale_gold=rationale_gold,
        rationale_distractors=rationale_distractors,
    )


def _arrange(
    gold_item: TaggedSequence, distractors: list[TaggedSequence], gold: int
) -> tuple[TaggedSequence, ...]:
    responses = list(distractors)
    responses.insert(gold, gold_item)
    return tuple(responses)


def _scene_instance(world: SyntheticWorld, scene: _Scene, kind: TaskKind) -> TaskInstance:
    question = (world.relation_word(scene.relation), tag_token(scene.target), *scene.fillers)
    attribute = int(scene.attributes[scene.target])
    answer = (*ANSWER_PREFIX, world.answer_word(attribute, scene.relation))
    if kind is TaskKind.ANSWERING:
        query = TaggedSequence.untagged(question)
        gold_item = TaggedSequence.untagged(answer)
        distractors = [
            TaggedSequence.untagged(
                (*ANSWER_PREFIX, world.answer_word(*divmod(int(fact), world.num_relations)))
            )
            for fact in scene.answer_distractors
        ]
        gold = scene.answer_gold
    else:
        query = TaggedSequence.untagged((*question, SEP_TOKEN, *answer))
        gold_item = TaggedSequence.untagged(
            (*RATIONALE_PREFIX, world.fact_word(attribute, scene.relation))
        )
        distractors = [
            TaggedSequence.untagged(
                (*RATIONALE_PREFIX, world.fact_word(*divmod(int(fact), world.num_relations)))
            )
            for fact in scene.rationale_distractors
        ]
        gold = scene.rationale_gold
    return TaskInstance(
        objects=ObjectSet.from_array(scene.features),
        query=query,
        responses=_arrange(gold_item, distractors, gold),
        gold=gold,
        kind=kind,
    )


def generate_synthetic(
    world: SyntheticWorld,
    n: int,
    seed: int,
    kind: TaskKind = TaskKind.ANSWERING,
) -> list[TaskInstance]:
    """Generate ``n`` scenes from ``world`` as instances of ``kind``.

    Each scene holds 2..max_objects objects whose features are attribute one-hots
    plus Gaussian noise. The question names a relation and tags one object; one
    response states the matching fact and three state other facts. Calls that
    share ``world`` and ``seed`` but differ in ``kind`` describe the same scenes.

    Raises:
        ContractError: If ``n`` is smaller than one.
        ConfigurationError: If the world has fewer than four facts.
    """
    if n < 1:
        message = f"n must be at least 1, got {n}"
        raise ContractError(message)
    if world.num_facts < NUM_CHOICES:
        message = (
            f"num_attributes * num_relations = {world.num_facts} is below {NUM_CHOICES}; "
            "cannot build four distinct choices"
        )
        raise ConfigurationError(message)
    rng = np.random.default_rng(seed)
    return [_scene_instance(world, _draw_scene(world, rng), kind) for _ in range(n)]


def pair_scenes(
    answering: Sequence[TaskInstance],
    rationale: Sequence[TaskInstance],
) -> list[tuple[TaskInstance, TaskInstance]]:
    """Pair answering and rationale instances of the same scene by position.

    Raises:
        ContractError: If the lists differ in length, kinds are wrong, or a pair
            does not share its objects.
    """
    if len(answering) != len(rationale):
        message = f"{len(answering)} answering instances but {len(rationale)} rationale ones"
        raise ContractError(message)
    pairs = []
    for position, (qa, qar) in enumerate(zip(answering, rationale, strict=True)):
        if qa.kind is not TaskKind.ANSWERING or qar.kind is not TaskKind.RATIONALE:
            message = f"Scene {position}: expected an answering and a rationale instance"
            raise ContractError(message)
        if qa.objects != qar.objects:
            message = (
                f"Scene {position}: answering and rationale instances describe different scenes"
            )
            raise ContractError(message)
        pairs.append((qa, qar))
    return pairs


# PERSISTENCE


class SequenceRecord(BaseModel):
    """On-disk form of a tagged sequence."""

    model_config = ConfigDict(extra="forbid")

    tokens: list[str]
    tags: list[int | None]


class InstanceRecord(BaseModel):
    """On-disk form of a task instance (one JSON line)."""

    model_config = ConfigDict(extra="forbid")

    objects: list[list[float]]
    query: SequenceRecord
    responses: list[SequenceRecord]
    gold: int
    kind: TaskKind

    @classmethod
    def from_instance(cls, instance: TaskInstance) -> InstanceRecord:
        """Describe ``instance`` as a record."""
        return cls(
            objects=[list(vector) for vector in instance.objects.features],
            query=SequenceRecord(
                tokens=list(instance.query.tokens), tags=list(instance.query.tags)
            ),
            responses=[
                SequenceRecord(tokens=list(response.tokens), tags=list(response.tags))
                for response in instance.responses
            ],
            gold=instance.gold,
            kind=instance.kind,
        )

    def to_instance(self) -> TaskInstance:
        """Rebuild the domain object, running its validation."""
        return TaskInstance(
            objects=ObjectSet(features=tuple(tuple(vector) for vector in self.objects)),
            query=TaggedSequence(tokens=tuple(self.query.tokens), tags=tuple(self.query.tags)),
            responses=tuple(
                TaggedSequence(tokens=tuple(record.tokens), tags=tuple(record.tags))
                for record in self.responses
            ),
            gold=self.gold,
            kind=self.kind,
        )


def save_dataset(instances: Iterable[TaskInstance], path: Path) -> None:
    """Write instances as UTF-8 JSON lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as file:
        for instance in instances:
            record = InstanceRecord.from_instance(instance).model_dump(mode="json")
            file.write(json.dumps(record, ensure_ascii=False) + "\n")


def _replace_unknown(
    sequence: TaggedSequence, vocabulary: Vocabulary
) -> tuple[TaggedSequence, int]:
    tokens = tuple(token if token in vocabulary else UNK_TOKEN for token in sequence.tokens)
    replaced = sum(old != new for old, new in zip(sequence.tokens, tokens, strict=True))
    if not replaced:
        return sequence, 0
    return TaggedSequence(tokens=tokens, tags=sequence.tags), replaced


def _with_vocabulary(instance: TaskInstance, vocabulary: Vocabulary) -> tuple[TaskInstance, int]:
    query, replaced = _replace_unknown(instance.query, vocabulary)
    responses = []
    for response in instance.responses:
        cleaned, count = _replace_unknown(response, vocabulary)
        responses.append(cleaned)
        replaced += count
    if not replaced:
        return instance, 0
    return (
        TaskInstance(
            objects=instance.objects,
            query=query,
            responses=tuple(responses),
            gold=instance.gold,
            kind=instance.kind,
        ),
        replaced,
    )


def load_dataset(path: Path, vocabulary: Vocabulary | None = None) -> list[TaskInstance]:
    """Read a JSON-lines dataset.

    Args:
        path: File written by :func:`save_dataset`.
        vocabulary: When given, tokens it does not contain become ``[UNK]``.

    Returns:
        list[TaskInstance]: Instances in file order.

    Raises:
        DatasetParseError: If a line is not a valid record; the message names the line.
    """
    instances: list[TaskInstance] = []
    unknown = 0
    with path.open(encoding="utf-8") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                instance = InstanceRecord.model_validate(json.loads(line)).to_instance()
            except (json.JSONDecodeError, pydantic.ValidationError, ValidationError) as error:
                message = f"{path}: line {line_number}: malformed record ({error})"
                raise DatasetParseError(message, cause=error) from error
            if vocabulary is not None:
                instance, replaced = _with_vocabulary(instance, vocabulary)
                unknown += replaced
            instances.append(instance)
    if unknown:
        logger.warning(
            "Replaced %d unknown tokens with %s while loading %s", unknown, UNK_TOKEN, path
        )
    logger.debug("Loaded %d instances from %s", len(instances), path)
    return instances
