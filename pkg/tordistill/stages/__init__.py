from .base import BaseStage, StageResult, StagePipeline, StageError
from .trial_stages import (
    TrialSpec, TrialState, DatasetStage, TeacherStage, StudentStage, EvaluationStage, build_trial_pipeline,
)

__all__ = [
    'BaseStage', 'StageResult', 'StagePipeline', 'StageError',
    'TrialSpec', 'TrialState', 'DatasetStage', 'TeacherStage', 'StudentStage', 'EvaluationStage',
    'build_trial_pipeline',
]
