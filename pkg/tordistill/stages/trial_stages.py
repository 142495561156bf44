"""
The four stages of one experiment trial.

DatasetStage builds and splits the data, TeacherStage obtains the frozen
teacher and attaches R_t, StudentStage trains the requested variant, and
EvaluationStage scores the result on the held-out split.
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

from ..data import DatasetSpec, LabeledDataset, build_dataset, train_test_split
from ..logging_system import get_logger
from ..nn import Network
from ..robust_stats import DegenerateScaleError, mad_sigma
from ..training import (
    EvaluationResult,
    MissingTeacherError,
    TrainConfig,
    TrainingOutcome,
    evaluate,
    teacher_predictions,
    train_student,
    train_teacher,
)
from ..variants import MethodVariant, VariantTag
from .base import BaseStage, StageError, StagePipeline, StageResult

TeacherSource = Callable[['TrialSpec', LabeledDataset], Network]


@dataclass
class TrialSpec:
    cell_key: str
    noise_std: float
    variant: MethodVariant
    trial: int
    seed: int
    data_seed: int
    split_seed: int
    dataset: DatasetSpec
    teacher_config: TrainConfig
    student_config: TrainConfig
    x_seed: Optional[int] = None

    @property
    def teacher_key(self) -> str:
        return f"std{self.noise_std:g}_trial{self.trial}"


@dataclass
class TrialState:
    spec: TrialSpec
    train: Optional[LabeledDataset] = None
    test: Optional[LabeledDataset] = None
    teacher: Optional[Network] = None
    sigma_hat: Optional[float] = None
    outcome: Optional[TrainingOutcome] = None
    network: Optional[Network] = None
    evaluation: Optional[EvaluationResult] = None


class DatasetStage(BaseStage):

    def __init__(self):
        super().__init__("dataset")

    def process(self, input_data: TrialSpec, context: Optional[Dict[str, Any]] = None) -> StageResult:
        spec = input_data
        dataset = build_dataset(spec.dataset, spec.noise_std, spec.data_seed, spec.x_seed)
        train, test = train_test_split(dataset, spec.dataset.test_fraction, seed=spec.split_seed)
        return StageResult(
            data=TrialState(spec=spec, train=train, test=test),
            metadata={"n_train": len(train), "n_test": len(test)},
        )


class TeacherStage(BaseStage):
    """
    Obtains the frozen teacher from ``context["teacher_source"]`` when the
    runner shares teachers between cells, otherwise trains one in place.
    """

    def __init__(self):
        super().__init__("teacher")

    def process(self, input_data: TrialState, context: Optional[Dict[str, Any]] = None) -> StageResult:
        state = input_data
        spec = state.spec
        variant = spec.variant
        wants_teacher = variant.tag is VariantTag.TEACHER or (variant.needs_teacher and not state.train.has_teacher)
        if not wants_teacher:
            return StageResult(data=state, metadata={"teacher": "not needed"})

        source: Optional[TeacherSource] = (context or {}).get("teacher_source")
        if source is not None:
            state.teacher = source(spec, state.train)
        else:
            state.teacher = train_teacher(state.train, spec.teacher_config).network

        if variant.needs_teacher:
            if state.teacher is None:
                raise MissingTeacherError(variant.tag.value)
            predictions = teacher_predictions(state.teacher, state.train,
                                              spec.student_config.teacher_dropout_at_distill,
                                              seed=spec.student_config.seed)
            state.train = state.train.with_teacher_predictions(predictions)
            try:
                state.sigma_hat = mad_sigma(state.train.residuals())
            except DegenerateScaleError as e:
                get_logger().log_failure(f"{spec.cell_key}#{spec.trial}: {e}")

        return StageResult(data=state, metadata={"teacher": spec.teacher_key, "sigma_hat": state.sigma_hat})


class StudentStage(BaseStage):

    def __init__(self):
        super().__init__("student")

    def process(self, input_data: TrialState, context: Optional[Dict[str, Any]] = None) -> StageResult:
        state = input_data
        spec = state.spec
        if spec.variant.tag is VariantTag.TEACHER:
            if state.teacher is None:
                raise StageError(f"{spec.teacher_key}: teacher stage produced no network")
            state.network = state.teacher
            return StageResult(data=state, metadata={"trained": "teacher reused"})

        state.outcome = train_student(state.train, state.teacher, spec.student_config)
        state.network = state.outcome.network
        metadata = {"epochs": len(state.outcome.trace), "wall_time": state.outcome.wall_time}
        if state.outcome.threshold is not None:
            metadata.update(state.outcome.threshold.to_dict())
            metadata["outlier_fraction"] = state.outcome.outlier_fraction
        return StageResult(data=state, metadata=metadata)


class EvaluationStage(BaseStage):

    def __init__(self):
        super().__init__("evaluation")

    def process(self, input_data: TrialState, context: Optional[Dict[str, Any]] = None) -> StageResult:
        state = input_data
        if state.network is None:
            return StageResult.failed("no trained network to evaluate")
        state.evaluation = evaluate(state.network, state.test)
        return StageResult(data=state, metadata=state.evaluation.to_dict())


def build_trial_pipeline(name: str = "trial") -> StagePipeline:
    return (StagePipeline(name)
            .add_stage(DatasetStage())
            .add_stage(TeacherStage())
            .add_stage(StudentStage())
            .add_stage(EvaluationStage()))
