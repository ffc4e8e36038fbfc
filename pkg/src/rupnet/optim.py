"""Adam with bias correction over a ParamStore"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .model import ParamStore

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Step counter and constants; the m/v moment tensors live on each Parameter"""

    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store: ParamStore, state: AdamState, lr: float):
    """One Adam update of every parameter, then zero the gradients"""
    for name, param in store.items():
        if not np.all(np.isfinite(param.grad)):
            raise NumericError(f"non-finite gradient for parameter {name} at step {state.t + 1}")

    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for _, param in store.items():
        g = param.grad
        param.m *= state.beta1
        param.m += (1.0 - state.beta1) * g
        param.v *= state.beta2
        param.v += (1.0 - state.beta2) * g * g
        m_hat = param.m / correction1
        v_hat = param.v / correction2
        # in place: BatchNormState and block params hold references to these arrays
        param.value -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.value.dtype)
    store.zero_grad()
