"""Adam update rule with bias correction.

State is kept per parameter slot, positionally aligned with the parameter
list handed to :func:`adam_step`.  Updates are deterministic: no internal
randomness, no reliance on dict ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DimensionError


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"adam: learning rate must be > 0, got {self.learning_rate}")


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """Apply one Adam update in place and advance the state.

    First call lazily allocates the moment accumulators with the parameter
    shapes; later calls insist the shapes still match.
    """
    if len(params) != len(grads):
        raise DimensionError(
            f"adam: {len(params)} params but {len(grads)} grads"
        )
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError(
            f"adam: state tracks {len(state.m)} params, got {len(params)}"
        )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise DimensionError(
                f"adam: grad shape {g.shape} != param shape {p.data.shape} at slot {i}"
            )
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
