from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .base import DimensionError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"Adam betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")


def adam_step(state: AdamState, params: Dict[str, np.ndarray],
              grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if set(params) != set(grads):
        raise DimensionError("Parameter and gradient names differ")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise DimensionError(f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}")

        m = state.first_moment.setdefault(name, np.zeros_like(param))
        v = state.second_moment.setdefault(name, np.zeros_like(param))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad

        m_hat = m / correction1
        v_hat = v / correction2
        param -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)

    return params


@dataclass
class LrSchedule:
    base_rate: float = 1e-3
    drop_epochs: List[int] = field(default_factory=list)
    drop_factor: float = 0.1

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ValueError(f"Base learning rate must be positive, got {self.base_rate}")
        if not 0.0 < self.drop_factor < 1.0:
            raise ValueError(f"Drop factor must lie in (0, 1), got {self.drop_factor}")
        self.drop_epochs = sorted(int(e) for e in self.drop_epochs)

    def rate_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError(f"Epoch must be non-negative, got {epoch}")
        drops = sum(1 for e in self.drop_epochs if e <= epoch)
        return self.base_rate * self.drop_factor ** drops


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    return schedule.rate_at(epoch)
