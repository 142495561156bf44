from typing import Dict, Optional

import numpy as np

from .base import DimensionError, Matrix, Module


class Dense(Module):
    """Affine map x @ W + b with W of shape (in, out)."""

    def __init__(self, in_features: int, out_features: int,
                 rng: Optional[np.random.Generator] = None, name: str = "dense"):
        super().__init__(name)
        if in_features <= 0 or out_features <= 0:
            raise DimensionError(f"Dense widths must be positive, got {in_features}->{out_features}")
        rng = rng if rng is not None else np.random.default_rng()

        # He-style uniform fan-in scaling
        limit = np.sqrt(6.0 / in_features)
        self.weight = rng.uniform(-limit, limit, size=(in_features, out_features))
        self.bias = np.zeros(out_features)

        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def _compute_output(self, x: Matrix) -> Matrix:
        if x.shape[1] != self.in_features:
            raise DimensionError(
                f"{self.name}: expected {self.in_features} input columns, got {x.shape[1]}"
            )
        return x @ self.weight + self.bias

    def _compute_input_grad(self, x: Matrix, output_grad: Matrix) -> Matrix:
        return output_grad @ self.weight.T

    def _update_parameters_grad(self, x: Matrix, output_grad: Matrix) -> None:
        self.grad_weight[...] = x.T @ output_grad
        self.grad_bias[...] = output_grad.sum(axis=0)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def __str__(self) -> str:
        return f"Dense({self.in_features} -> {self.out_features})"


class ReLU(Module):

    def __init__(self, name: str = "relu"):
        super().__init__(name)

    def _compute_output(self, x: Matrix) -> Matrix:
        return np.maximum(x, 0.0)

    def _compute_input_grad(self, x: Matrix, output_grad: Matrix) -> Matrix:
        return output_grad * (x > 0)

    def __str__(self) -> str:
        return "ReLU"


class BatchNorm(Module):
    """
    Per-feature batch normalization.

    Train mode normalizes with the batch statistics and updates the running
    estimates; inference mode uses only the running estimates.
    """

    def __init__(self, features: int, momentum: float = 0.1, epsilon: float = 1e-5,
                 name: str = "batchnorm"):
        super().__init__(name)
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"BatchNorm momentum must lie in (0, 1), got {momentum}")
        if epsilon <= 0.0:
            raise ValueError(f"BatchNorm epsilon must be positive, got {epsilon}")
        self.momentum = momentum
        self.epsilon = epsilon

        self.scale = np.ones(features)
        self.shift = np.zeros(features)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

        self.grad_scale = np.zeros_like(self.scale)
        self.grad_shift = np.zeros_like(self.shift)

        self._normalized: Optional[Matrix] = None
        self._inv_std: Optional[np.ndarray] = None

    @property
    def features(self) -> int:
        return self.scale.shape[0]

    def _compute_output(self, x: Matrix) -> Matrix:
        if x.shape[1] != self.features:
            raise DimensionError(
                f"{self.name}: expected {self.features} features, got {x.shape[1]}"
            )
        if self.training:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            n = x.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean = self.running_mean
            var = self.running_var

        self._inv_std = 1.0 / np.sqrt(var + self.epsilon)
        self._normalized = (x - mean) * self._inv_std
        return self._normalized * self.scale + self.shift

    def _compute_input_grad(self, x: Matrix, output_grad: Matrix) -> Matrix:
        grad_normalized = output_grad * self.scale
        if not self.training:
            return grad_normalized * self._inv_std

        n = x.shape[0]
        return (self._inv_std / n) * (
            n * grad_normalized
            - grad_normalized.sum(axis=0)
            - self._normalized * (grad_normalized * self._normalized).sum(axis=0)
        )

    def _update_parameters_grad(self, x: Matrix, output_grad: Matrix) -> None:
        self.grad_scale[...] = (output_grad * self._normalized).sum(axis=0)
        self.grad_shift[...] = output_grad.sum(axis=0)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"scale": self.scale, "shift": self.shift}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {"scale": self.grad_scale, "shift": self.grad_shift}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_buffers(self, running_mean: np.ndarray, running_var: np.ndarray) -> None:
        if np.any(running_var < 0):
            raise ValueError(f"{self.name}: running variance must be non-negative")
        self.running_mean = np.array(running_mean, dtype=np.float64)
        self.running_var = np.array(running_var, dtype=np.float64)

    def clear_cache(self) -> None:
        super().clear_cache()
        self._normalized = None
        self._inv_std = None

    def __str__(self) -> str:
        return f"BatchNorm({self.features})"


class Dropout(Module):
    """Inverted dropout: survivors are scaled by 1/(1 - rate) in train mode."""

    def __init__(self, rate: float = 0.5, rng: Optional[np.random.Generator] = None,
                 name: str = "dropout"):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"Dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng()
        self.mask: Optional[Matrix] = None

    def _compute_output(self, x: Matrix) -> Matrix:
        if not self.training or self.rate == 0.0:
            self.mask = None
            return x
        keep = 1.0 - self.rate
        self.mask = (self.rng.random(x.shape) < keep) / keep
        return x * self.mask

    def _compute_input_grad(self, x: Matrix, output_grad: Matrix) -> Matrix:
        if self.mask is None:
            return output_grad
        return output_grad * self.mask

    def clear_cache(self) -> None:
        super().clear_cache()
        self.mask = None

    def __str__(self) -> str:
        return f"Dropout({self.rate})"
