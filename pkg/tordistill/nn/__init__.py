from .base import Module, Sequential, Matrix, NetworkError, DimensionError, ForwardStateError, as_matrix
from .layers import Dense, ReLU, BatchNorm, Dropout
from .network import Network, Mode
from .optim import AdamState, adam_step, LrSchedule, lr_at
from .checkpoint import CheckpointError, write_tensors, read_tensors

__all__ = [
    'Module', 'Sequential', 'Matrix', 'NetworkError', 'DimensionError', 'ForwardStateError', 'as_matrix',
    'Dense', 'ReLU', 'BatchNorm', 'Dropout',
    'Network', 'Mode',
    'AdamState', 'adam_step', 'LrSchedule', 'lr_at',
    'CheckpointError', 'write_tensors', 'read_tensors',
]
