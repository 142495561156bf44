"""
Base module interface for the network engine.

Every layer caches what it saw on the forward pass and composes its own
backward pass by hand; Sequential chains them in order.
"""

from abc import ABC, abstractmethod
from typing import Dict, List, Optional

import numpy as np

Matrix = np.ndarray


class NetworkError(Exception):
    def __init__(self, message="Network error occurred"):
        super().__init__(message)


class DimensionError(NetworkError):
    def __init__(self, message="Dimension mismatch"):
        super().__init__(message)


class ForwardStateError(NetworkError):
    def __init__(self, message="Backward called without a cached train-mode forward pass"):
        super().__init__(message)


def as_matrix(values, name: str = "batch") -> Matrix:
    """Coerce to a 2-D float64 array; a 1-D vector becomes a single column."""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NetworkError(f"{name} contains non-finite values")
    return array


class Module(ABC):
    def __init__(self, name: str):
        self.name = name
        self.training = True
        self._input: Optional[Matrix] = None

    def forward(self, x: Matrix) -> Matrix:
        self._input = x
        return self._compute_output(x)

    def backward(self, output_grad: Matrix) -> Matrix:
        if self._input is None:
            raise ForwardStateError(f"{self.name}: no cached forward pass")
        if output_grad.shape[0] != self._input.shape[0]:
            raise DimensionError(
                f"{self.name}: gradient has {output_grad.shape[0]} rows, "
                f"forward pass had {self._input.shape[0]}"
            )
        self._update_parameters_grad(self._input, output_grad)
        return self._compute_input_grad(self._input, output_grad)

    @abstractmethod
    def _compute_output(self, x: Matrix) -> Matrix:
        pass

    @abstractmethod
    def _compute_input_grad(self, x: Matrix, output_grad: Matrix) -> Matrix:
        pass

    def _update_parameters_grad(self, x: Matrix, output_grad: Matrix) -> None:
        pass

    def parameters(self) -> Dict[str, np.ndarray]:
        return {}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def zero_grad(self) -> None:
        for grad in self.gradients().values():
            grad.fill(0.0)

    def clear_cache(self) -> None:
        self._input = None

    def train(self) -> None:
        self.training = True

    def evaluate(self) -> None:
        self.training = False

    def __str__(self) -> str:
        return f"{self.__class__.__name__}(name='{self.name}')"


class Sequential(Module):

    def __init__(self, name: str = "sequential"):
        super().__init__(name)
        self.modules: List[Module] = []

    def add_module(self, module: Module) -> 'Sequential':
        if not isinstance(module, Module):
            raise TypeError(f"Module must be instance of Module, got {type(module)}")
        self.modules.append(module)
        return self

    def _compute_output(self, x: Matrix) -> Matrix:
        activation = x
        for module in self.modules:
            activation = module.forward(activation)
        return activation

    def backward(self, output_grad: Matrix) -> Matrix:
        if self._input is None:
            raise ForwardStateError(f"{self.name}: no cached forward pass")
        grad = output_grad
        for module in reversed(self.modules):
            grad = module.backward(grad)
        return grad

    def _compute_input_grad(self, x: Matrix, output_grad: Matrix) -> Matrix:
        # backward is overridden; kept to satisfy the interface
        return output_grad

    def _named(self, attr: str) -> Dict[str, np.ndarray]:
        named = {}
        for index, module in enumerate(self.modules):
            for key, value in getattr(module, attr)().items():
                named[f"{index}.{key}"] = value
        return named

    def parameters(self) -> Dict[str, np.ndarray]:
        return self._named("parameters")

    def gradients(self) -> Dict[str, np.ndarray]:
        return self._named("gradients")

    def buffers(self) -> Dict[str, np.ndarray]:
        return self._named("buffers")

    def clear_cache(self) -> None:
        super().clear_cache()
        for module in self.modules:
            module.clear_cache()

    def train(self) -> None:
        self.training = True
        for module in self.modules:
            module.train()

    def evaluate(self) -> None:
        self.training = False
        for module in self.modules:
            module.evaluate()

    def __getitem__(self, index: int) -> Module:
        return self.modules[index]

    def __len__(self) -> int:
        return len(self.modules)
