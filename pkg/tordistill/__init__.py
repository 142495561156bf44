"""
tordistill: teacher-outlier-rejection knowledge distillation for noisy 1-D regression.
"""

from .logging_system import get_logger, set_log_level
from .robust_stats import OutlierThreshold, ResidualSet, epsilon_outlier, expected_tail_count, mad_sigma, median
from .losses import CompositeWeights, LossResult, TorLossConfig, composite_loss, tor_loss
from .variants import MethodVariant, VariantTag
from .models import MlpSpec, MultiTaskOutput, build_student, build_teacher, combined_prediction
from .data import LabeledDataset, attach_teacher_predictions, load_tabular, make_sinusoid
from .training import TrainConfig, evaluate, train_student, train_teacher

__version__ = "0.1.0"

__all__ = [
    'get_logger', 'set_log_level',
    'OutlierThreshold', 'ResidualSet', 'epsilon_outlier', 'expected_tail_count', 'mad_sigma', 'median',
    'CompositeWeights', 'LossResult', 'TorLossConfig', 'composite_loss', 'tor_loss',
    'MethodVariant', 'VariantTag',
    'MlpSpec', 'MultiTaskOutput', 'build_student', 'build_teacher', 'combined_prediction',
    'LabeledDataset', 'attach_teacher_predictions', 'load_tabular', 'make_sinusoid',
    'TrainConfig', 'evaluate', 'train_student', 'train_teacher',
]
