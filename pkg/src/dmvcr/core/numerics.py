"""Deterministic float64 tensor algebra with reverse-mode differentiation.

Every forward operation records how to push gradients back to its inputs on the
tensor it creates. ``backward`` materialises that record as a :class:`Tape` in
topological order and walks it once in reverse.

There is no implicit broadcasting: operands of elementwise operations must have
identical shapes, and all alignment is done explicitly by the caller.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable
from collections.abc import Iterator
from collections.abc import Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike
from numpy.typing import NDArray

from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DimensionError
from dmvcr.core.exceptions import IndexOutOfRangeError
from dmvcr.core.exceptions import NumericError

FloatArray = NDArray[np.float64]
BackwardRule = Callable[[FloatArray], tuple[FloatArray | None, ...]]

# Additive mask for attention logits at padded positions.
MASK_VALUE = -1e30

_node_ids = itertools.count()

# Cleared inside `no_grad` blocks; operations then record nothing.
_recording = [True]


class ElementwiseOp(StrEnum):
    """Binary pointwise operations."""

    ADD = "add"
    SUB = "sub"
    MUL = "mul"


class ActivationKind(StrEnum):
    """Pointwise nonlinearities."""

    SIGMOID = "sigmoid"
    TANH = "tanh"


class ReduceOp(StrEnum):
    """Reductions along one axis."""

    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True, slots=True)
class Operation:
    """A recorded forward step: its inputs and the rule mapping the output gradient back."""

    name: str
    inputs: tuple[Tensor, ...]
    backward_rule: BackwardRule


class Tensor:
    """An n-dimensional float64 array taking part in a differentiation graph.

    Attributes:
        data: Values in row-major order.
        requires_grad: Whether gradients flow to (or through) this tensor.
        grad: Same-shape gradient accumulator, present iff ``requires_grad``.
            Leaves accumulate across backward passes; interior nodes hold the
            gradient of the most recent pass.
        node_id: Identifier of the node in the graph.
        creator: The operation that produced this tensor, ``None`` for leaves.
        name: Optional label used in error messages.
    """

    __slots__ = ("creator", "data", "grad", "name", "node_id", "requires_grad")

    def __init__(self, data: ArrayLike, *, requires_grad: bool = False, name: str = "") -> None:
        """Create a leaf tensor from a copy of ``data``."""
        array = np.array(data, dtype=np.float64)
        _ensure_finite(array, name or "tensor")
        self.data: FloatArray = array
        self.requires_grad = requires_grad
        self.grad: FloatArray | None = np.zeros_like(array) if requires_grad else None
        self.node_id = next(_node_ids)
        self.creator: Operation | None = None
        self.name = name

    @classmethod
    def _from_operation(
        cls,
        name: str,
        data: FloatArray,
        inputs: tuple[Tensor, ...],
        backward_rule: BackwardRule,
    ) -> Tensor:
        _ensure_finite(data, name)
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = _recording[-1] and any(tensor.requires_grad for tensor in inputs)
        out.grad = np.zeros_like(data) if out.requires_grad else None
        out.node_id = next(_node_ids)
        out.creator = Operation(name, inputs, backward_rule) if out.requires_grad else None
        out.name = name
        return out

    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False, name: str = "") -> Tensor:
        """Create an all-zero tensor."""
        return cls(np.zeros(shape), requires_grad=requires_grad, name=name)

    @property
    def shape(self) -> tuple[int, ...]:
        """Extents of the tensor."""
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        """Whether the tensor was created directly rather than by an operation."""
        return self.creator is None

    def item(self) -> float:
        """Return the single value of a one-element tensor."""
        if self.data.size != 1:
            message = f"item() needs a single-element tensor, got shape {self.shape}"
            raise ContractError(message)
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> FloatArray:
        """Return a copy of the values."""
        return self.data.copy()

    def zero_grad(self) -> None:
        """Reset the gradient accumulator to zeros."""
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        """Short description with name and shape."""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass(frozen=True)
class Tape:
    """Executed operations in topological order (inputs before the nodes they feed)."""

    nodes: tuple[Tensor, ...]

    @classmethod
    def from_root(cls, root: Tensor) -> Tape:
        """Collect the recorded ancestry of ``root``.

        Args:
            root: Tensor whose producing operations should be listed.

        Returns:
            Tape: Every interior node reachable from ``root``, each exactly once.
        """
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.creator is None or node.node_id in visited:
                continue
            visited.add(node.node_id)
            stack.append((node, True))
            stack.extend((parent, False) for parent in reversed(node.creator.inputs))
        return cls(nodes=tuple(order))


def _ensure_finite(array: FloatArray, label: str) -> None:
    if not np.isfinite(array).all():
        message = f"Non-finite value produced by {label}"
        raise NumericError(message)


def _check_same_shape(a: Tensor, b: Tensor, op_name: str) -> None:
    if a.shape != b.shape:
        message = f"{op_name}: shapes {a.shape} and {b.shape} differ"
        raise DimensionError(message)


def _normalise_axis(axis: int, ndim: int, op_name: str) -> int:
    if not -ndim <= axis < ndim:
        message = f"{op_name}: axis {axis} is invalid for a {ndim}-d tensor"
        raise DimensionError(message)
    return axis % ndim


def _sorted_sum(values: FloatArray, axis: int) -> FloatArray:
    # Summing sorted values makes the result independent of input order.
    return np.sort(values, axis=axis).sum(axis=axis, keepdims=True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording: results inside the block never require gradients.

    Blocks nest; leaves keep their ``requires_grad`` flag.
    """
    _recording.append(False)
    try:
        yield
    finally:
        _recording.pop()


def grad_enabled() -> bool:
    """Whether operations currently record their backward rules."""
    return _recording[-1]


def record_operation(
    name: str,
    data: FloatArray,
    inputs: Sequence[Tensor],
    backward_rule: BackwardRule,
) -> Tensor:
    """Wrap a result computed outside this module as one node of the graph.

    ``backward_rule`` maps the gradient of ``data`` to one gradient (or ``None``)
    per input, in input order.

    Raises:
        NumericError: If ``data`` is not finite.
    """
    return Tensor._from_operation(name, data, tuple(inputs), backward_rule)  # noqa: SLF001


def stable_sigmoid(values: FloatArray) -> FloatArray:
    """Logistic function on an array without overflow for large negative inputs."""
    z = np.exp(-np.abs(values))
    return np.where(values >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


# FORWARD OPERATIONS


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×n and an n×p tensor.

    Raises:
        DimensionError: If either operand is not 2-d or the inner extents differ.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:  # noqa: PLR2004
        message = f"matmul: cannot multiply shapes {a.shape} and {b.shape}"
        raise DimensionError(message)
    a_data, b_data = a.data, b.data

    def rule(grad: FloatArray) -> tuple[FloatArray, FloatArray]:
        return grad @ b_data.T, a_data.T @ grad

    return Tensor._from_operation("matmul", a_data @ b_data, (a, b), rule)  # noqa: SLF001


def elementwise(op: ElementwiseOp, a: Tensor, b: Tensor) -> Tensor:
    """Pointwise add, sub or mul of two same-shape tensors."""
    _check_same_shape(a, b, str(op))
    a_data, b_data = a.data, b.data
    if op is ElementwiseOp.ADD:
        result = a_data + b_data

        def rule(grad: FloatArray) -> tuple[FloatArray, FloatArray]:
            return grad, grad

    elif op is ElementwiseOp.SUB:
        result = a_data - b_data

        def rule(grad: FloatArray) -> tuple[FloatArray, FloatArray]:
            return grad, -grad

    else:
        result = a_data * b_data

        def rule(grad: FloatArray) -> tuple[FloatArray, FloatArray]:
            return grad * b_data, grad * a_data

    return Tensor._from_operation(str(op), result, (a, b), rule)  # noqa: SLF001


def add(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise sum."""
    return elementwise(ElementwiseOp.ADD, a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise difference."""
    return elementwise(ElementwiseOp.SUB, a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise (Hadamard) product."""
    return elementwise(ElementwiseOp.MUL, a, b)


def activation(kind: ActivationKind, x: Tensor) -> Tensor:
    """Pointwise sigmoid or tanh."""
    if kind is ActivationKind.SIGMOID:
        result = stable_sigmoid(x.data)

        def rule(grad: FloatArray) -> tuple[FloatArray]:
            return (grad * result * (1.0 - result),)

    else:
        result = np.tanh(x.data)

        def rule(grad: FloatArray) -> tuple[FloatArray]:
            return (grad * (1.0 - result * result),)

    return Tensor._from_operation(str(kind), result, (x,), rule)  # noqa: SLF001


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function 1 / (1 + e^-x)."""
    return activation(ActivationKind.SIGMOID, x)


def tanh(x: Tensor) -> Tensor:
    """Hyperbolic tangent."""
    return activation(ActivationKind.TANH, x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Normalised exponentials along ``axis`` with max-subtraction.

    Raises:
        DimensionError: If the axis is invalid or has zero extent.
    """
    if x.data.ndim == 0:
        message = "softmax: needs at least one axis"
        raise DimensionError(message)
    axis = _normalise_axis(axis, x.data.ndim, "softmax")
    if x.shape[axis] == 0:
        message = f"softmax: axis {axis} of shape {x.shape} is empty"
        raise DimensionError(message)
    exps = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    result = exps / _sorted_sum(exps, axis)

    def rule(grad: FloatArray) -> tuple[FloatArray]:
        inner = (grad * result).sum(axis=axis, keepdims=True)
        return (result * (grad - inner),)

    return Tensor._from_operation("softmax", result, (x,), rule)  # noqa: SLF001


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``.

    Raises:
        DimensionError: If the list is empty or the non-axis extents disagree.
    """
    if not tensors:
        message = "concat: nothing to concatenate"
        raise DimensionError(message)
    ndim = tensors[0].data.ndim
    axis = _normalise_axis(axis, ndim, "concat")
    reference = tensors[0].shape
    for tensor in tensors[1:]:
        shape = tensor.shape
        if len(shape) != ndim or any(
            extent != reference[dim] for dim, extent in enumerate(shape) if dim != axis
        ):
            message = f"concat: shapes {reference} and {shape} are ragged outside axis {axis}"
            raise DimensionError(message)
    boundaries = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]
    result = np.concatenate([tensor.data for tensor in tensors], axis=axis)

    def rule(grad: FloatArray) -> tuple[FloatArray, ...]:
        return tuple(np.split(grad, boundaries, axis=axis))

    return Tensor._from_operation("concat", result, tuple(tensors), rule)  # noqa: SLF001


def reduce(op: ReduceOp, x: Tensor, axis: int | None = None) -> Tensor:
    """Sum or mean along ``axis`` (every axis when ``None``); the axis is dropped."""
    if axis is None:
        extent = x.data.size
        result = x.data.sum() if op is ReduceOp.SUM else x.data.mean()
        result = np.asarray(result, dtype=np.float64)
    else:
        axis = _normalise_axis(axis, x.data.ndim, str(op))
        extent = x.shape[axis]
        result = x.data.sum(axis=axis) if op is ReduceOp.SUM else x.data.mean(axis=axis)
    factor = 1.0 if op is ReduceOp.SUM else 1.0 / max(extent, 1)
    shape = x.shape

    def rule(grad: FloatArray) -> tuple[FloatArray]:
        expanded = grad if axis is None else np.expand_dims(grad, axis)
        return (np.broadcast_to(expanded * factor, shape).copy(),)

    return Tensor._from_operation(str(op), result, (x,), rule)  # noqa: SLF001


def sum_all(x: Tensor) -> Tensor:
    """Sum of every component as a scalar tensor."""
    return reduce(ReduceOp.SUM, x)


def cross_entropy_logits(logits: Tensor, gold: int) -> Tensor:
    """Negative log-likelihood of class ``gold`` under softmax(logits).

    Accepts a vector of C logits or a 1×C row. Computed through log-sum-exp.

    Raises:
        DimensionError: If there are fewer than two classes or more than one row.
        IndexOutOfRangeError: If ``gold`` is not in ``0..C-1``.
    """
    flat = logits.data.reshape(-1)
    classes = flat.size
    if classes < 2 or logits.data.ndim > 2 or (logits.data.ndim == 2 and logits.shape[0] != 1):  # noqa: PLR2004
        message = f"cross_entropy_logits: expected C >= 2 logits in one row, got {logits.shape}"
        raise DimensionError(message)
    if not 0 <= gold < classes:
        message = f"cross_entropy_logits: gold index {gold} outside 0..{classes - 1}"
        raise IndexOutOfRangeError(message)
    shifted = flat - flat.max()
    exps = np.exp(shifted)
    total = np.sort(exps).sum()
    loss = np.log(total) - shifted[gold]
    probabilities = exps / total
    shape = logits.shape

    def rule(grad: FloatArray) -> tuple[FloatArray]:
        delta = probabilities.copy()
        delta[gold] -= 1.0
        return ((delta * grad).reshape(shape),)

    return Tensor._from_operation(  # noqa: SLF001
        "cross_entropy", np.asarray(loss, dtype=np.float64), (logits,), rule
    )


def take_rows(x: Tensor, indices: Sequence[int] | NDArray[np.intp]) -> Tensor:
    """Gather rows of a 2-d tensor; repeated indices accumulate in the backward pass.

    Raises:
        IndexOutOfRangeError: If an index is negative or not below the row count.
    """
    index_array = np.asarray(indices, dtype=np.intp)
    rows = x.shape[0]
    if index_array.size and (index_array.min() < 0 or index_array.max() >= rows):
        message = f"take_rows: index outside 0..{rows - 1} in {index_array.tolist()}"
        raise IndexOutOfRangeError(message)
    shape = x.shape

    def rule(grad: FloatArray) -> tuple[FloatArray]:
        scattered = np.zeros(shape)
        np.add.at(scattered, index_array, grad)
        return (scattered,)

    return Tensor._from_operation("take_rows", x.data[index_array], (x,), rule)  # noqa: SLF001


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``start:stop`` along ``axis``."""
    axis = _normalise_axis(axis, x.data.ndim, "narrow")
    if not 0 <= start <= stop <= x.shape[axis]:
        message = f"narrow: range {start}:{stop} invalid for extent {x.shape[axis]}"
        raise DimensionError(message)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    selector = tuple(index)
    shape = x.shape

    def rule(grad: FloatArray) -> tuple[FloatArray]:
        full = np.zeros(shape)
        full[selector] = grad
        return (full,)

    return Tensor._from_operation("narrow", x.data[selector].copy(), (x,), rule)  # noqa: SLF001


def transpose(x: Tensor) -> Tensor:
    """Transpose of a 2-d tensor."""
    if x.data.ndim != 2:  # noqa: PLR2004
        message = f"transpose: expected a 2-d tensor, got shape {x.shape}"
        raise DimensionError(message)

    def rule(grad: FloatArray) -> tuple[FloatArray]:
        return (grad.T.copy(),)

    return Tensor._from_operation("transpose", x.data.T.copy(), (x,), rule)  # noqa: SLF001


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply every component by a constant."""

    def rule(grad: FloatArray) -> tuple[FloatArray]:
        return (grad * factor,)

    return Tensor._from_operation("scale", x.data * factor, (x,), rule)  # noqa: SLF001


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """View the values under a new shape with the same number of components."""
    if int(np.prod(shape)) != x.data.size:
        message = f"reshape: cannot view shape {x.shape} as {shape}"
        raise DimensionError(message)
    original = x.shape

    def rule(grad: FloatArray) -> tuple[FloatArray]:
        return (grad.reshape(original),)

    return Tensor._from_operation("reshape", x.data.reshape(shape).copy(), (x,), rule)  # noqa: SLF001


# BACKWARD PASS


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every leaf that requires gradients.

    Gradients accumulate across calls; zero them between optimizer steps.

    Raises:
        ContractError: If ``root`` is not a single-element tensor.
        NumericError: If a non-finite gradient appears.
    """
    if root.data.size != 1:
        message = f"backward needs a scalar root, got shape {root.shape}"
        raise ContractError(message)
    if not root.requires_grad:
        return
    seed = np.ones_like(root.data)
    if root.creator is None:
        root.grad += seed  # type: ignore[operator]
        return

    pending: dict[int, FloatArray] = {root.node_id: seed}
    for node in reversed(Tape.from_root(root).nodes):
        grad = pending.pop(node.node_id, None)
        if grad is None:
            continue
        node.grad = grad
        operation = node.creator
        assert operation is not None  # noqa: S101
        for parent, parent_grad in zip(
            operation.inputs, operation.backward_rule(grad), strict=True
        ):
            if parent_grad is None or not parent.requires_grad:
                continue
            _ensure_finite(parent_grad, f"backward of {operation.name}")
            if parent.creator is None:
                parent.grad += parent_grad  # type: ignore[operator]
            elif parent.node_id in pending:
                pending[parent.node_id] = pending[parent.node_id] + parent_grad
            else:
                pending[parent.node_id] = parent_grad


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
) -> float:
    """Compare the analytic gradient of ``f`` at ``x`` with central differences.

    ``x`` must be a leaf with ``requires_grad``. Its values are perturbed in
    place and restored; its gradient accumulator is left as it was found.
    Other leaves reached by ``f`` receive one backward pass worth of gradient.

    Args:
        f: Deterministic function mapping ``x`` to a scalar tensor.
        x: Point at which the gradient is checked.
        eps: Perturbation size.

    Returns:
        float: max over components of |analytic - numeric| / max(1, |analytic|, |numeric|).

    Raises:
        ContractError: If ``eps`` is not positive or ``x`` does not track gradients.
        NumericError: If an evaluation is not finite.
    """
    if eps <= 0:
        message = f"finite_difference_check: eps must be positive, got {eps}"
        raise ContractError(message)
    if x.grad is None or not x.is_leaf:
        message = "finite_difference_check: x must be a leaf tensor with requires_grad"
        raise ContractError(message)

    saved_grad = x.grad.copy()
    x.zero_grad()
    try:
        backward(f(x))
        analytic = x.grad.copy()
    finally:
        x.grad[...] = saved_grad

    worst = 0.0
    for index in np.ndindex(*x.shape):
        original = x.data[index]
        try:
            x.data[index] = original + eps
            upper = f(x).item()
            x.data[index] = original - eps
            lower = f(x).item()
        finally:
            x.data[index] = original
        numeric = (upper - lower) / (2.0 * eps)
        if not np.isfinite(numeric):
            message = f"finite_difference_check: non-finite difference at {index}"
            raise NumericError(message)
        expected = analytic[index]
        error = abs(expected - numeric) / max(1.0, abs(expected), abs(numeric))
        worst = max(worst, error)
    return worst
