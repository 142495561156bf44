"""
Teacher and student network builders.

Both are one-hidden-layer MLPs: Dense followed by ReLU, BatchNorm and
Dropout (order configurable), then one scalar Dense head per task. The
multi-task student shares the whole trunk between its two heads.
"""

import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .nn import BatchNorm, Dense, Dropout, Network, NetworkError, ReLU, Sequential
from .nn.checkpoint import CheckpointError, read_tensors, write_tensors
from .variants import MethodVariant

TEACHER_HIDDEN = 150
STUDENT_HIDDEN = 40
DEFAULT_BLOCK_ORDER = ("relu", "batchnorm", "dropout")


class HeadCountError(NetworkError):
    def __init__(self, message="Operation needs a two-head network"):
        super().__init__(message)


def component_rng(seed: int, component: str) -> np.random.Generator:
    """Independent, named random stream so equal names initialize identically across builds."""
    return np.random.default_rng([int(seed), zlib.crc32(component.encode("utf-8"))])


@dataclass
class MlpSpec:
    input_width: int = 1
    hidden_widths: List[int] = field(default_factory=lambda: [TEACHER_HIDDEN])
    head_names: List[str] = field(default_factory=lambda: ["out"])
    dropout_rate: float = 0.5
    block_order: List[str] = field(default_factory=lambda: list(DEFAULT_BLOCK_ORDER))
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        self.head_names = list(self.head_names)
        self.block_order = list(self.block_order)
        if self.input_width <= 0:
            raise ValueError(f"input_width must be positive, got {self.input_width}")
        if not self.hidden_widths or any(w <= 0 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must all be positive, got {self.hidden_widths}")
        if self.head_count not in (1, 2):
            raise ValueError(f"head count must be 1 or 2, got {self.head_count}")
        if len(set(self.head_names)) != len(self.head_names):
            raise ValueError(f"head names must be unique, got {self.head_names}")
        if sorted(self.block_order) != sorted(DEFAULT_BLOCK_ORDER):
            raise ValueError(f"block order must be a permutation of {DEFAULT_BLOCK_ORDER}, got {self.block_order}")

    @property
    def head_count(self) -> int:
        return len(self.head_names)

    def expected_trainable_count(self) -> int:
        count = 0
        width_in = self.input_width
        for width in self.hidden_widths:
            count += width_in * width + width  # dense
            count += 2 * width  # batchnorm scale/shift
            width_in = width
        return count + self.head_count * (width_in + 1)

    def expected_parameter_count(self) -> int:
        return self.expected_trainable_count() + 2 * sum(self.hidden_widths)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MlpSpec':
        return cls(**data)


def build_network(spec: MlpSpec, seed: int = 0) -> Network:
    trunk = Sequential("trunk")
    width_in = spec.input_width
    for index, width in enumerate(spec.hidden_widths):
        trunk.add_module(Dense(width_in, width, rng=component_rng(seed, f"trunk.dense{index}"),
                               name=f"dense{index}"))
        for block in spec.block_order:
            if block == "relu":
                trunk.add_module(ReLU(name=f"relu{index}"))
            elif block == "batchnorm":
                trunk.add_module(BatchNorm(width, momentum=spec.bn_momentum, name=f"batchnorm{index}"))
            else:
                trunk.add_module(Dropout(spec.dropout_rate, rng=component_rng(seed, f"trunk.dropout{index}"),
                                         name=f"dropout{index}"))
        width_in = width

    heads = [Dense(width_in, 1, rng=component_rng(seed, f"head.{name}"), name=f"head_{name}")
             for name in spec.head_names]
    return Network(trunk, heads, spec.head_names, spec.input_width,
                   metadata={"spec": spec.to_dict(), "seed": int(seed)})


def build_teacher(seed: int = 0, hidden_width: int = TEACHER_HIDDEN, dropout_rate: float = 0.5,
                  block_order: Optional[Sequence[str]] = None) -> Network:
    spec = MlpSpec(
        hidden_widths=[hidden_width],
        head_names=["out"],
        dropout_rate=dropout_rate,
        block_order=list(block_order or DEFAULT_BLOCK_ORDER),
    )
    return build_network(spec, seed)


def build_student(variant: MethodVariant, seed: int = 0, hidden_width: int = STUDENT_HIDDEN,
                  dropout_rate: float = 0.5, block_order: Optional[Sequence[str]] = None) -> Network:
    spec = MlpSpec(
        hidden_widths=[hidden_width],
        head_names=variant.head_names,
        dropout_rate=dropout_rate,
        block_order=list(block_order or DEFAULT_BLOCK_ORDER),
    )
    network = build_network(spec, seed)
    network.metadata["variant"] = variant.to_dict()
    return network


@dataclass
class MultiTaskOutput:
    head_tor: np.ndarray
    head_d: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return (self.head_tor + self.head_d) / 2.0

    @classmethod
    def from_outputs(cls, outputs: np.ndarray, head_names: Sequence[str] = ("tor", "d")) -> 'MultiTaskOutput':
        outputs = np.asarray(outputs, dtype=np.float64)
        if outputs.ndim != 2 or outputs.shape[1] != 2:
            raise HeadCountError(f"Expected two head columns, got shape {outputs.shape}")
        names = list(head_names)
        return cls(head_tor=outputs[:, names.index("tor")], head_d=outputs[:, names.index("d")])


def combined_prediction(output: Union[MultiTaskOutput, np.ndarray]) -> np.ndarray:
    if isinstance(output, MultiTaskOutput):
        return output.combined
    return MultiTaskOutput.from_outputs(output).combined


def final_prediction(network: Network, x: np.ndarray) -> np.ndarray:
    """Inference-mode prediction per sample; two-head networks score the head average."""
    outputs = network.predict(x)
    if network.head_count == 2:
        return combined_prediction(MultiTaskOutput.from_outputs(outputs, network.head_names))
    return outputs[:, 0]


def save_network(network: Network, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> Path:
    metadata = dict(network.metadata)
    metadata.update(extra or {})
    return write_tensors(path, network.state_dict(), metadata)


def load_network(path: Union[str, Path]) -> Network:
    tensors, metadata = read_tensors(path)
    if "spec" not in metadata:
        raise CheckpointError(f"Checkpoint {path} carries no network spec")
    network = build_network(MlpSpec.from_dict(metadata["spec"]), metadata.get("seed", 0))
    network.load_state_dict(tensors)
    network.metadata.update(metadata)
    return network
