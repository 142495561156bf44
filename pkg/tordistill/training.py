"""
Teacher and student training pipelines.

The trainer picks a loss strategy for the requested method variant, the same
way an execution engine picks a strategy for a plan, and runs one shared
mini-batch Adam loop with a step learning-rate schedule.
"""

import json
import math
import time
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, Union

import numpy as np

from .data import BatchIterator, LabeledDataset
from .logging_system import get_logger
from .losses import (
    LossResult,
    TorLossConfig,
    composite_loss,
    get_pointwise_loss,
    l1_loss,
    tbr_loss,
    tor_loss,
    tukey_robust_loss,
)
from .models import (
    DEFAULT_BLOCK_ORDER,
    STUDENT_HIDDEN,
    TEACHER_HIDDEN,
    build_student,
    build_teacher,
    component_rng,
    final_prediction,
    load_network,
    save_network,
)
from .nn import AdamState, Dropout, LrSchedule, Mode, Network, NetworkError, adam_step
from .robust_stats import DegenerateScaleError, OutlierThreshold, ResidualSet, mad_sigma
from .variants import MethodVariant, VariantError, VariantTag

THRESHOLD_CADENCES = ("once", "per-epoch")
ROBUST_SCALE_CADENCES = ("batch", "epoch")


class TrainingError(Exception):
    def __init__(self, message="Training failed"):
        super().__init__(message)


class DivergenceError(TrainingError):
    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        super().__init__(f"Training diverged at epoch {epoch}: {detail or 'loss became non-finite'}")


class MissingTeacherError(TrainingError):
    def __init__(self, variant: str):
        super().__init__(f"Variant '{variant}' needs teacher predictions, but no teacher was given")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1000
    base_lr: float = 1e-3
    lr_drop_epochs: List[int] = field(default_factory=lambda: [70])
    lr_drop_factor: float = 0.1
    dropout_rate: float = 0.5
    seed: int = 0
    variant: MethodVariant = field(default_factory=lambda: MethodVariant(VariantTag.STUDENT_L1))
    hidden_width: int = STUDENT_HIDDEN
    block_order: List[str] = field(default_factory=lambda: list(DEFAULT_BLOCK_ORDER))
    teacher_loss: str = "l1"
    sigma_override: Optional[float] = None
    threshold_cadence: str = "once"
    robust_scale_cadence: str = "batch"
    teacher_dropout_at_distill: bool = False

    def __post_init__(self):
        if not isinstance(self.variant, MethodVariant):
            self.variant = MethodVariant.from_tag(self.variant)
        if self.epochs < 0:
            raise TrainingError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size <= 0:
            raise TrainingError(f"batch_size must be positive, got {self.batch_size}")
        if self.threshold_cadence not in THRESHOLD_CADENCES:
            raise TrainingError(f"threshold_cadence must be one of {THRESHOLD_CADENCES}")
        if self.robust_scale_cadence not in ROBUST_SCALE_CADENCES:
            raise TrainingError(f"robust_scale_cadence must be one of {ROBUST_SCALE_CADENCES}")
        get_pointwise_loss(self.teacher_loss)
        get_pointwise_loss(self.variant.ld_loss)

    @classmethod
    def for_teacher(cls, **overrides: Any) -> 'TrainConfig':
        defaults = dict(
            epochs=100,
            batch_size=1000,
            base_lr=1e-3,
            lr_drop_epochs=[40, 80],
            hidden_width=TEACHER_HIDDEN,
            variant=MethodVariant(VariantTag.TEACHER),
        )
        defaults.update(overrides)
        return cls(**defaults)

    @classmethod
    def for_student(cls, variant: Union[MethodVariant, str], **overrides: Any) -> 'TrainConfig':
        if not isinstance(variant, MethodVariant):
            variant = MethodVariant.from_tag(variant)
        defaults = dict(
            epochs=100,
            batch_size=1000,
            base_lr=1e-3,
            lr_drop_epochs=[70],
            hidden_width=STUDENT_HIDDEN,
            variant=variant,
        )
        defaults.update(overrides)
        return cls(**defaults)

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.base_lr, list(self.lr_drop_epochs), self.lr_drop_factor)


class TrainingTrace:
    """Per-epoch loss components and learning rate, written as JSON lines."""

    def __init__(self, tag: str):
        self.tag = tag
        self.records: List[Dict[str, Any]] = []

    def record(self, epoch: int, lr: float, components: Dict[str, float]) -> None:
        self.records.append({"epoch": epoch, "lr": lr, **components})

    def series(self, key: str = "loss") -> List[tuple]:
        return [(r["epoch"], r[key]) for r in self.records if key in r]

    def write_jsonl(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for record in self.records:
                f.write(json.dumps({"tag": self.tag, **record}) + "\n")
        return path

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class TrainingOutcome:
    network: Network
    trace: TrainingTrace
    variant: MethodVariant
    threshold: Optional[OutlierThreshold] = None
    outlier_fraction: Optional[float] = None
    checkpoint_path: Optional[Path] = None
    wall_time: float = 0.0


@dataclass
class EvaluationResult:
    mae_noisy: float
    mae_clean: Optional[float] = None
    head_mae: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    predictions: Optional[np.ndarray] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"mae_noisy": self.mae_noisy, "mae_clean": self.mae_clean, "head_mae": self.head_mae}


def compute_threshold(train: LabeledDataset, variant: MethodVariant, config: TrainConfig) -> OutlierThreshold:
    """Fix epsilon_outlier from the frozen teacher's residuals on the training split."""
    residuals = ResidualSet(train.residuals(), {"split": "train", "seed": str(train.seed)})
    if variant.epsilon is not None:
        sigma = config.sigma_override if config.sigma_override is not None else mad_sigma(residuals)
        source = "fixed" if config.sigma_override is not None else "mad"
        return OutlierThreshold.from_epsilon(variant.epsilon, sigma, config.batch_size, source)
    return OutlierThreshold.from_residuals(residuals, variant.alpha, config.batch_size,
                                           sigma_override=config.sigma_override)


def flagged_fraction(train: LabeledDataset, epsilon: float) -> float:
    return float(np.mean(~(np.abs(train.residuals()) < epsilon)))


class LossStrategy(ABC):
    """Loss for one family of method variants. Instances live for one training run."""

    tags: tuple = ()

    def __init__(self, variant: MethodVariant, config: TrainConfig, teacher: Optional[Network] = None):
        self.variant = variant
        self.config = config
        self.teacher = teacher
        self.threshold: Optional[OutlierThreshold] = None

    @classmethod
    def can_handle(cls, variant: MethodVariant) -> bool:
        return variant.tag in cls.tags

    def prepare(self, train: LabeledDataset) -> None:
        pass

    def on_epoch_start(self, network: Network, train: LabeledDataset, epoch: int) -> LabeledDataset:
        """Returns the training data for this epoch."""
        return train

    @abstractmethod
    def compute(self, outputs: np.ndarray, batch: LabeledDataset) -> LossResult:
        pass

    @staticmethod
    def _column(values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64).reshape(-1, 1)


class PointwiseStrategy(LossStrategy):
    tags = (VariantTag.TEACHER, VariantTag.STUDENT_L1, VariantTag.STUDENT_MSE)

    def compute(self, outputs: np.ndarray, batch: LabeledDataset) -> LossResult:
        if self.variant.tag is VariantTag.TEACHER:
            name = self.config.teacher_loss
        elif self.variant.tag is VariantTag.STUDENT_MSE:
            name = "mse"
        else:
            name = "l1"
        return get_pointwise_loss(name)(outputs, self._column(batch.t))


class OnlyLdStrategy(LossStrategy):
    tags = (VariantTag.ONLY_LD,)

    def compute(self, outputs: np.ndarray, batch: LabeledDataset) -> LossResult:
        return get_pointwise_loss(self.variant.ld_loss)(outputs, self._column(batch.teacher_predictions))


class TorStrategy(LossStrategy):
    tags = (VariantTag.ONLY_TOR,)

    def prepare(self, train: LabeledDataset) -> None:
        self._refresh(train)

    def on_epoch_start(self, network: Network, train: LabeledDataset, epoch: int) -> LabeledDataset:
        if self.config.threshold_cadence != "per-epoch" or epoch == 0:
            return train
        if self.teacher is not None and self.config.teacher_dropout_at_distill:
            train = train.with_teacher_predictions(
                teacher_predictions(self.teacher, train, True, seed=self.config.seed, draw=epoch)
            )
        self._refresh(train)
        return train

    def _refresh(self, train: LabeledDataset) -> None:
        self.threshold = compute_threshold(train, self.variant, self.config)
        self.tor_config = TorLossConfig(self.threshold.epsilon_outlier, self.variant.outlier_penalty)

    def _tor(self, head: np.ndarray, batch: LabeledDataset) -> LossResult:
        return tor_loss(head, self._column(batch.teacher_predictions), self._column(batch.t), self.tor_config)

    def compute(self, outputs: np.ndarray, batch: LabeledDataset) -> LossResult:
        return self._tor(outputs, batch)


class MultiTaskStrategy(TorStrategy):
    tags = (VariantTag.OURS_FULL,)

    def compute(self, outputs: np.ndarray, batch: LabeledDataset) -> LossResult:
        tor = self._tor(outputs[:, 0:1], batch)
        l_d = get_pointwise_loss(self.variant.ld_loss)(outputs[:, 1:2], self._column(batch.teacher_predictions))
        return composite_loss(tor, l_d, self.variant.weights)


class L1TbrStrategy(LossStrategy):
    tags = (VariantTag.L1_TBR,)

    def compute(self, outputs: np.ndarray, batch: LabeledDataset) -> LossResult:
        target = self._column(batch.t)
        l1 = l1_loss(outputs, target)
        tbr = tbr_loss(outputs, self._column(batch.teacher_predictions), target, self.variant.margin)
        return LossResult(l1.value + tbr.value, l1.grad + tbr.grad,
                          {"l1": l1.value, "tbr": tbr.value, **tbr.details})


class RobustStrategy(LossStrategy):
    """
    Tukey loss with a MAD scale. Under the per-batch cadence a batch whose
    MAD is zero (a single trailing sample, or mostly tied residuals) reuses
    the last valid scale, seeded from the whole split before the first epoch.
    """

    tags = (VariantTag.ROBUST,)

    def __init__(self, variant: MethodVariant, config: TrainConfig, teacher: Optional[Network] = None):
        super().__init__(variant, config, teacher)
        self.scale: Optional[float] = None
        self.fallback_batches = 0

    @staticmethod
    def _split_scale(network: Network, train: LabeledDataset) -> float:
        return mad_sigma(network.predict(train.inputs())[:, 0] - train.t)

    def on_epoch_start(self, network: Network, train: LabeledDataset, epoch: int) -> LabeledDataset:
        if self.config.robust_scale_cadence == "epoch":
            self.scale = self._split_scale(network, train)
        elif self.scale is None:
            try:
                self.scale = self._split_scale(network, train)
            except DegenerateScaleError:
                pass
        return train

    def compute(self, outputs: np.ndarray, batch: LabeledDataset) -> LossResult:
        target = self._column(batch.t)
        if self.config.robust_scale_cadence == "batch":
            try:
                self.scale = mad_sigma(outputs[:, 0] - batch.t)
            except DegenerateScaleError:
                if self.scale is None:
                    raise
                self.fallback_batches += 1
        return tukey_robust_loss(outputs, target, scale=self.scale)


class Trainer:

    def __init__(self):
        self.strategies: List[Type[LossStrategy]] = []
        self.logger = get_logger()
        self._register_default_strategies()

    def _register_default_strategies(self) -> None:
        for strategy in (PointwiseStrategy, OnlyLdStrategy, TorStrategy, MultiTaskStrategy,
                         L1TbrStrategy, RobustStrategy):
            self.register_strategy(strategy)

    def register_strategy(self, strategy: Type[LossStrategy]) -> None:
        self.strategies.append(strategy)

    def strategy_for(self, variant: MethodVariant, config: TrainConfig,
                     teacher: Optional[Network] = None) -> LossStrategy:
        for strategy in self.strategies:
            if strategy.can_handle(variant):
                return strategy(variant, config, teacher)
        raise VariantError(f"No loss strategy found for variant: {variant.tag.value}")

    def fit(self, network: Network, train: LabeledDataset, config: TrainConfig,
            tag: Optional[str] = None, teacher: Optional[Network] = None) -> TrainingOutcome:
        variant = config.variant
        tag = tag or variant.tag.value
        if network.head_count != variant.head_count:
            raise VariantError(
                f"Variant '{variant.tag.value}' needs {variant.head_count} head(s), network has {network.head_count}"
            )
        if variant.needs_teacher and not train.has_teacher:
            raise MissingTeacherError(variant.tag.value)

        start = time.time()
        strategy = self.strategy_for(variant, config, teacher)
        strategy.prepare(train)

        outlier_fraction = None
        if strategy.threshold is not None:
            outlier_fraction = flagged_fraction(train, strategy.threshold.epsilon_outlier)
            t = strategy.threshold
            self.logger.log_threshold(t.sigma_hat, t.alpha, t.batch_size, t.epsilon_outlier, outlier_fraction)

        schedule = config.schedule()
        adam = AdamState(learning_rate=schedule.base_rate)
        batches = BatchIterator(train, config.batch_size, seed=config.seed)
        trace = TrainingTrace(tag)

        for epoch in range(config.epochs):
            adam.learning_rate = schedule.rate_at(epoch)
            epoch_data = strategy.on_epoch_start(network, train, epoch)
            sums: Dict[str, float] = defaultdict(float)
            seen = 0

            for indices in batches.batch_indices(epoch):
                batch = epoch_data.subset(indices)
                try:
                    outputs = network.forward(batch.inputs(), Mode.TRAIN)
                except NetworkError as e:
                    raise DivergenceError(epoch, str(e))
                result = strategy.compute(outputs, batch)
                if not (math.isfinite(result.value) and np.all(np.isfinite(result.grad))):
                    raise DivergenceError(epoch, f"loss={result.value}")

                network.zero_grad()
                grads = network.backward(result.grad)
                adam_step(adam, network.named_parameters(), grads)

                size = len(indices)
                seen += size
                sums["loss"] += result.value * size
                for key, value in result.details.items():
                    if isinstance(value, (int, float)):
                        sums[key] += float(value) * size

            components = {key: value / max(seen, 1) for key, value in sums.items()}
            trace.record(epoch, adam.learning_rate, components)
            self.logger.log_epoch(tag, epoch, adam.learning_rate, components)

        network.clear_cache()
        return TrainingOutcome(
            network=network,
            trace=trace,
            variant=variant,
            threshold=strategy.threshold,
            outlier_fraction=outlier_fraction,
            wall_time=time.time() - start,
        )


def teacher_predictions(teacher: Network, dataset: LabeledDataset, dropout_active: bool = False,
                        seed: int = 0, draw: int = 0) -> np.ndarray:
    """
    Frozen-teacher predictions R_t. Inference mode by default; with
    ``dropout_active`` the dropout masks are sampled while BatchNorm still
    uses its running statistics, so no teacher state is updated. The masks
    come from streams keyed by (seed, draw), never from the teacher's own
    generators, so the same call always gives the same R_t.
    """
    if not dropout_active:
        return teacher.predict(dataset.inputs())[:, 0]
    teacher.trunk.evaluate()
    dropouts = [m for m in teacher.trunk.modules if isinstance(m, Dropout)]
    saved = [m.rng for m in dropouts]
    for index, module in enumerate(dropouts):
        module.rng = component_rng(seed, f"distill.dropout{index}.draw{draw}")
        module.training = True
    try:
        hidden = teacher.trunk.forward(dataset.inputs())
        outputs = teacher.heads[0].forward(hidden)
    finally:
        for module, rng in zip(dropouts, saved):
            module.rng = rng
        teacher.trunk.evaluate()
        teacher.clear_cache()
    return outputs[:, 0]


def train_teacher(dataset: LabeledDataset, config: Optional[TrainConfig] = None,
                  checkpoint_path: Optional[Union[str, Path]] = None) -> TrainingOutcome:
    config = config or TrainConfig.for_teacher()
    if config.variant.tag is not VariantTag.TEACHER:
        raise VariantError(f"train_teacher needs the teacher variant, got '{config.variant.tag.value}'")

    teacher = build_teacher(config.seed, config.hidden_width, config.dropout_rate, config.block_order)
    outcome = Trainer().fit(teacher, dataset, config, tag="teacher")
    if checkpoint_path is not None:
        outcome.checkpoint_path = save_network(teacher, checkpoint_path,
                                               {"role": "teacher", "noise_std": dataset.noise_std})
    return outcome


def train_student(dataset: LabeledDataset, teacher_checkpoint: Optional[Union[Network, str, Path]],
                  config: TrainConfig) -> TrainingOutcome:
    variant = config.variant
    if variant.tag is VariantTag.TEACHER:
        raise VariantError("Use train_teacher for the teacher variant")

    train = dataset
    teacher: Optional[Network] = None
    if variant.needs_teacher and teacher_checkpoint is not None:
        teacher = (teacher_checkpoint if isinstance(teacher_checkpoint, Network)
                   else load_network(teacher_checkpoint))
    if variant.needs_teacher and not dataset.has_teacher:
        if teacher is None:
            raise MissingTeacherError(variant.tag.value)
        train = dataset.with_teacher_predictions(
            teacher_predictions(teacher, dataset, config.teacher_dropout_at_distill, seed=config.seed)
        )

    student = build_student(variant, config.seed, config.hidden_width, config.dropout_rate, config.block_order)
    return Trainer().fit(student, train, config, teacher=teacher)


def evaluate(network: Network, dataset: LabeledDataset) -> EvaluationResult:
    """MAE against noisy labels and, when present, clean targets; inference mode only."""
    prediction = final_prediction(network, dataset.inputs())

    def mae(pred: np.ndarray, target: Optional[np.ndarray]) -> Optional[float]:
        return None if target is None else float(np.mean(np.abs(pred - target)))

    head_mae = {}
    if network.head_count > 1:
        outputs = network.predict(dataset.inputs())
        for index, name in enumerate(network.head_names):
            head_mae[name] = {"noisy": mae(outputs[:, index], dataset.t),
                              "clean": mae(outputs[:, index], dataset.clean)}

    return EvaluationResult(
        mae_noisy=mae(prediction, dataset.t),
        mae_clean=mae(prediction, dataset.clean),
        head_mae=head_mae,
        predictions=prediction,
    )
