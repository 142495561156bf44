from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .base import DimensionError, ForwardStateError, Matrix, NetworkError, Sequential, as_matrix
from .layers import Dense


class Mode(Enum):
    TRAIN = "train"
    INFER = "infer"


class Network:
    """
    A shared trunk followed by one or more scalar output heads.

    forward returns one column per head, in head order. Backward sums the
    head contributions into the trunk, so every head sees the same hidden
    activations and the trunk receives the gradient of all of them.
    """

    def __init__(self, trunk: Sequential, heads: Sequence[Dense], head_names: Sequence[str],
                 input_width: int, metadata: Optional[Dict[str, Any]] = None):
        if len(heads) != len(head_names):
            raise NetworkError("Each head needs exactly one name")
        if not heads:
            raise NetworkError("A network needs at least one head")
        for head in heads:
            if head.out_features != 1:
                raise DimensionError(f"Heads must be scalar, got width {head.out_features}")
        self.trunk = trunk
        self.heads: List[Dense] = list(heads)
        self.head_names: List[str] = list(head_names)
        self.input_width = input_width
        self.metadata = dict(metadata or {})
        self._hidden: Optional[Matrix] = None
        self.input_gradient: Optional[Matrix] = None

    @property
    def head_count(self) -> int:
        return len(self.heads)

    def forward(self, batch: Union[Matrix, Sequence[float]], mode: Union[Mode, str] = Mode.TRAIN) -> Matrix:
        mode = Mode(mode)
        x = as_matrix(batch)
        if x.shape[1] != self.input_width:
            raise DimensionError(
                f"Network expects {self.input_width} input columns, got {x.shape[1]}"
            )

        if mode is Mode.TRAIN:
            self.trunk.train()
        else:
            self.trunk.evaluate()

        hidden = self.trunk.forward(x)
        outputs = np.hstack([head.forward(hidden) for head in self.heads])

        if mode is Mode.TRAIN:
            self._hidden = hidden
        else:
            self.clear_cache()

        if not np.all(np.isfinite(outputs)):
            raise NetworkError("Forward pass produced non-finite outputs")
        return outputs

    def predict(self, batch: Union[Matrix, Sequence[float]], chunk_size: int = 8192) -> Matrix:
        x = as_matrix(batch)
        if x.shape[0] == 0:
            return np.zeros((0, self.head_count))
        chunks = [self.forward(x[i:i + chunk_size], Mode.INFER)
                  for i in range(0, x.shape[0], chunk_size)]
        return np.vstack(chunks)

    def backward(self, output_gradient: Matrix) -> Dict[str, np.ndarray]:
        if self._hidden is None:
            raise ForwardStateError()
        grad = np.asarray(output_gradient, dtype=np.float64)
        if grad.ndim == 1:
            grad = grad.reshape(-1, 1)
        if grad.shape != (self._hidden.shape[0], self.head_count):
            raise DimensionError(
                f"Output gradient must have shape {(self._hidden.shape[0], self.head_count)}, "
                f"got {grad.shape}"
            )

        hidden_grad = np.zeros_like(self._hidden)
        for index, head in enumerate(self.heads):
            hidden_grad += head.backward(grad[:, index:index + 1])
        self.input_gradient = self.trunk.backward(hidden_grad)
        return self.named_gradients()

    @property
    def last_hidden(self) -> Optional[Matrix]:
        return self._hidden

    def clear_cache(self) -> None:
        self._hidden = None
        self.trunk.clear_cache()
        for head in self.heads:
            head.clear_cache()

    def zero_grad(self) -> None:
        self.trunk.zero_grad()
        for head in self.heads:
            head.zero_grad()

    def _collect(self, attr: str) -> Dict[str, np.ndarray]:
        named = {f"trunk.{k}": v for k, v in getattr(self.trunk, attr)().items()}
        for name, head in zip(self.head_names, self.heads):
            for key, value in getattr(head, attr)().items():
                named[f"heads.{name}.{key}"] = value
        return named

    def named_parameters(self) -> Dict[str, np.ndarray]:
        return self._collect("parameters")

    def named_gradients(self) -> Dict[str, np.ndarray]:
        return self._collect("gradients")

    def named_buffers(self) -> Dict[str, np.ndarray]:
        return self._collect("buffers")

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {k: v.copy() for k, v in self.named_parameters().items()}
        state.update({k: v.copy() for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise NetworkError(
                f"State mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}"
            )
        for key, target in params.items():
            if target.shape != state[key].shape:
                raise DimensionError(f"{key}: expected shape {target.shape}, got {state[key].shape}")
            target[...] = state[key]
        self._load_buffers(state)

    def _load_buffers(self, state: Dict[str, np.ndarray]) -> None:
        for index, module in enumerate(self.trunk.modules):
            prefix = f"trunk.{index}."
            if module.buffers():
                module.load_buffers(state[prefix + "running_mean"], state[prefix + "running_var"])

    def trainable_parameter_count(self) -> int:
        return int(sum(p.size for p in self.named_parameters().values()))

    def parameter_count(self) -> int:
        """Trainable parameters plus normalization running statistics."""
        return int(sum(v.size for v in self.state_dict().values()))

    def __str__(self) -> str:
        trunk = " -> ".join(str(m) for m in self.trunk.modules)
        return f"Network({trunk} => heads{self.head_names})"
