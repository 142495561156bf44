"""
Base stage interface for the trial pipeline.

A trial is a short chain of stages (data, teacher, student, evaluation). Each
stage returns a StageResult instead of raising, so the pipeline can report
which stage broke and the harness can record the trial as failed.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional


class StageError(Exception):
    def __init__(self, message="Stage failed"):
        super().__init__(message)


@dataclass
class StageResult:
    data: Any
    metadata: Optional[Dict[str, Any]] = None
    success: bool = True
    error_message: Optional[str] = None

    @classmethod
    def failed(cls, message: str) -> 'StageResult':
        return cls(data=None, success=False, error_message=message)


class BaseStage(ABC):

    def __init__(self, name: str):
        self.name = name

    @abstractmethod
    def process(self, input_data: Any, context: Optional[Dict[str, Any]] = None) -> StageResult:
        pass

    def __str__(self) -> str:
        return f"{self.__class__.__name__}(name='{self.name}')"


class StagePipeline:
    """
    Runs stages in order, feeding each one the previous stage's data. A stage's
    metadata is stored in the shared context under ``<stage name>_metadata``.
    """

    def __init__(self, name: str = "trial"):
        self.name = name
        self.stages: List[BaseStage] = []

    def add_stage(self, stage: BaseStage) -> 'StagePipeline':
        if not isinstance(stage, BaseStage):
            raise TypeError(f"Stage must be instance of BaseStage, got {type(stage)}")
        self.stages.append(stage)
        return self

    def process(self, input_data: Any, context: Optional[Dict[str, Any]] = None) -> StageResult:
        shared = dict(context or {})
        current = input_data

        for stage in self.stages:
            try:
                result = stage.process(current, shared)
            except Exception as e:
                reason = f"Stage {stage.name} error: {type(e).__name__}: {e}"
                return StageResult(data=current, metadata=shared, success=False, error_message=reason)

            if not result.success:
                reason = f"Stage {stage.name} failed: {result.error_message}"
                return StageResult(data=current, metadata=shared, success=False, error_message=reason)

            current = result.data
            if result.metadata:
                shared[f"{stage.name}_metadata"] = result.metadata

        return StageResult(data=current, metadata=shared, success=True)

    def __len__(self) -> int:
        return len(self.stages)
