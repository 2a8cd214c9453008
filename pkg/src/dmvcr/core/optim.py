"""Adam with bias correction and one learning rate per parameter group."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from dataclasses import field
from typing import TYPE_CHECKING

import numpy as np

from dmvcr.core.exceptions import ConfigurationError
from dmvcr.core.exceptions import ContractError
from dmvcr.core.exceptions import DimensionError
from dmvcr.core.exceptions import NumericError
from dmvcr.core.model import BASE_GROUP
from dmvcr.core.model import DICTIONARY_GROUP
from dmvcr.core.model import DICTIONARY_PARAMETER
from dmvcr.core.model import ModelParams
from dmvcr.core.numerics import FloatArray
from dmvcr.core.numerics import Tensor

if TYPE_CHECKING:
    from dmvcr.utils.settings import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment estimates per parameter name and the number of steps taken."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, FloatArray] = field(default_factory=dict)
    v: dict[str, FloatArray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: RunConfig) -> AdamState:
        """Fresh state with the configured betas and epsilon."""
        return cls(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)

    def moments(self, name: str, shape: tuple[int, ...]) -> tuple[FloatArray, FloatArray]:
        """Moment buffers for ``name``, created as zeros on first use."""
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
        if self.m[name].shape != shape:
            message = f"Adam moments for {name} have shape {self.m[name].shape}, not {shape}"
            raise DimensionError(message)
        return self.m[name], self.v[name]


def learning_rates(config: RunConfig) -> dict[str, float]:
    """Group learning rates from a run configuration."""
    return {DICTIONARY_GROUP: config.lr_dict, BASE_GROUP: config.lr_base}


def group_of(name: str) -> str:
    """Optimizer group a parameter belongs to."""
    return DICTIONARY_GROUP if name == DICTIONARY_PARAMETER else BASE_GROUP


def adam_step(
    params: ModelParams | Mapping[str, Tensor],
    grads: Mapping[str, FloatArray] | None,
    state: AdamState,
    lr_groups: Mapping[str, float],
) -> None:
    """Apply one Adam update in place and zero the gradients.

    Args:
        params: Model parameters, or tensors keyed by parameter name.
        grads: Gradient per name; ``None`` reads each tensor's accumulated ``grad``.
        state: Moment estimates, updated in place.
        lr_groups: Learning rate per group (``dictionary`` and ``base``).

    Raises:
        ConfigurationError: If a group has no learning rate.
        NumericError: If a gradient is not finite; the message names the parameter.
    """
    named = params.named_parameters() if isinstance(params, ModelParams) else dict(params)
    gradients: dict[str, FloatArray] = {}
    for name, tensor in named.items():
        grad = tensor.grad if grads is None else grads.get(name)
        if grad is None:
            message = f"No gradient for parameter {name}"
            raise ContractError(message)
        if grad.shape != tensor.shape:
            message = f"Gradient for {name} has shape {grad.shape}, parameter has {tensor.shape}"
            raise DimensionError(message)
        if not np.isfinite(grad).all():
            message = f"Non-finite gradient for parameter {name}"
            raise NumericError(message)
        if group_of(name) not in lr_groups:
            message = f"No learning rate for group {group_of(name)!r}"
            raise ConfigurationError(message)
        gradients[name] = grad

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, tensor in named.items():
        grad = gradients[name]
        m, v = state.moments(name, tensor.shape)
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        lr = lr_groups[group_of(name)]
        if lr == 0:
            continue
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    for tensor in named.values():
        tensor.zero_grad()
    logger.debug("Adam step %d applied to %d parameters", state.step, len(named))
