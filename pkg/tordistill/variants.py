from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, List, Optional

from .losses import CompositeWeights, OutlierPenalty


class VariantError(Exception):
    def __init__(self, message="Invalid method variant"):
        super().__init__(message)


class VariantTag(Enum):
    TEACHER = "teacher"
    STUDENT_L1 = "student-l1"
    STUDENT_MSE = "student-mse"
    OURS_FULL = "ours-full"
    ONLY_LD = "only-ld"
    ONLY_TOR = "only-tor"
    L1_TBR = "l1-tbr"
    ROBUST = "robust"


TOR_VARIANTS = {VariantTag.OURS_FULL, VariantTag.ONLY_TOR}
TEACHER_VARIANTS = {VariantTag.OURS_FULL, VariantTag.ONLY_TOR, VariantTag.ONLY_LD, VariantTag.L1_TBR}


@dataclass(frozen=True)
class MethodVariant:
    """A training recipe: which loss, which heads, and its hyper-parameters."""

    tag: VariantTag
    c_tor: float = 1.0
    c_d: float = 1.0
    alpha: float = 1.0
    margin: float = 0.0
    epsilon: Optional[float] = None
    outlier_penalty: OutlierPenalty = OutlierPenalty.SQRT_ABS
    ld_loss: str = "l1"

    def __post_init__(self):
        object.__setattr__(self, "tag", VariantTag(self.tag))
        object.__setattr__(self, "outlier_penalty", OutlierPenalty(self.outlier_penalty))
        if self.alpha <= 0:
            raise VariantError(f"alpha must be positive, got {self.alpha}")
        if self.margin < 0:
            raise VariantError(f"TBR margin must be non-negative, got {self.margin}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise VariantError(f"epsilon override must be positive, got {self.epsilon}")
        if self.tag is VariantTag.OURS_FULL:
            CompositeWeights(self.c_tor, self.c_d)

    @classmethod
    def from_tag(cls, tag: Any, **overrides: Any) -> 'MethodVariant':
        try:
            tag = VariantTag(tag)
        except ValueError:
            valid = ", ".join(t.value for t in VariantTag)
            raise VariantError(f"Unknown variant '{tag}'. Available variants: {valid}")
        known = {k: v for k, v in overrides.items() if v is not None}
        return cls(tag=tag, **known)

    @property
    def head_names(self) -> List[str]:
        if self.tag is VariantTag.OURS_FULL:
            return ["tor", "d"]
        if self.tag is VariantTag.ONLY_LD:
            return ["d"]
        if self.tag is VariantTag.ONLY_TOR:
            return ["tor"]
        return ["out"]

    @property
    def head_count(self) -> int:
        return len(self.head_names)

    @property
    def needs_teacher(self) -> bool:
        return self.tag in TEACHER_VARIANTS

    @property
    def uses_tor(self) -> bool:
        return self.tag in TOR_VARIANTS

    @property
    def weights(self) -> CompositeWeights:
        return CompositeWeights(self.c_tor, self.c_d)

    def with_overrides(self, **overrides: Any) -> 'MethodVariant':
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tag": self.tag.value,
            "c_tor": self.c_tor,
            "c_d": self.c_d,
            "alpha": self.alpha,
            "margin": self.margin,
            "epsilon": self.epsilon,
            "outlier_penalty": self.outlier_penalty.value,
            "ld_loss": self.ld_loss,
        }
