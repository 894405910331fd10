"""
ADAM and plain SGD on named parameter dicts.

One AdamState belongs to one optimization job (GAN generator, GAN
discriminator, autoencoder, or a single solver restart); states never share
moment buffers.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple, Union

import numpy as np

from ml.exceptions import ConfigError, ContractError, DimensionError, NumericError
from ml.tensor import Tensor

GradLike = Union[Tensor, np.ndarray]


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")


def _grad_array(name: str, param: Tensor, grads: Dict[str, GradLike]) -> np.ndarray:
    if name not in grads:
        raise ContractError(f"missing gradient for parameter '{name}'")
    g = grads[name]
    g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
    if g.shape != param.shape:
        raise DimensionError(f"gradient for '{name}' has shape {g.shape}, parameter has {param.shape}")
    if not np.isfinite(g).all():
        raise NumericError(f"non-finite gradient for parameter '{name}'")
    return g


def adam_step(state: AdamState, params: Dict[str, Tensor],
              grads: Dict[str, GradLike]) -> Tuple[Dict[str, Tensor], AdamState]:
    """One bias-corrected ADAM update; returns the new params and the advanced state."""
    arrays = {name: _grad_array(name, p, grads) for name, p in params.items()}
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t

    updated = {}
    for name, p in params.items():
        g = arrays[name]
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        elif state.m[name].shape != p.shape:
            raise DimensionError(f"moment buffer for '{name}' has shape {state.m[name].shape}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        updated[name] = Tensor.wrap(p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps),
                                    "adam_step")
    return updated, state


def sgd_step(params: Dict[str, Tensor], grads: Dict[str, GradLike], lr: float) -> Dict[str, Tensor]:
    if lr < 0 or not math.isfinite(lr):
        raise ConfigError(f"learning rate must be a finite value >= 0, got {lr}")
    return {
        name: Tensor.wrap(p.data - lr * _grad_array(name, p, grads), "sgd_step")
        for name, p in params.items()
    }
