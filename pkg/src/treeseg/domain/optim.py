from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON
from .errors import ShapeMismatchError, TrainingDivergedError
from .nn_ops import ParamSet


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPSILON

    @classmethod
    def for_params(cls, params: ParamSet) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(params: ParamSet, state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """Aggiornamento Adam con correzione del bias, applicato sul posto."""
    grads = {}
    for name, tensor in params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if grad.shape != tensor.shape:
            raise ShapeMismatchError(f"adam:{name}", tensor.shape, grad.shape)
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(
                f"Gradiente non finito per il parametro '{name}'.", parameter=name
            )
        grads[name] = grad

    state.step += 1
    dtype_of = {name: t.dtype.type for name, t in params.items()}
    for name, tensor in params.items():
        cast = dtype_of[name]
        grad = grads[name]
        if weight_decay:
            grad = grad + cast(weight_decay) * tensor.data
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        m *= cast(state.beta1)
        m += cast(1 - state.beta1) * grad
        v *= cast(state.beta2)
        v += cast(1 - state.beta2) * grad * grad
        m_hat = m / cast(1 - state.beta1**state.step)
        v_hat = v / cast(1 - state.beta2**state.step)
        tensor.data -= cast(lr) * m_hat / (np.sqrt(v_hat) + cast(state.eps))


def learning_rate(lr0: float, gamma: float, epoch: int) -> float:
    return lr0 * gamma**epoch
