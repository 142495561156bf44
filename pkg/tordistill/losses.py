"""
Training losses with hand-written gradients.

Every loss reduces by the batch mean and returns a LossResult carrying the
scalar value and the gradient with respect to the prediction argument.
Targets and teacher predictions never receive a gradient.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np

from .robust_stats import DegenerateScaleError, mad_sigma

TUKEY_CUTOFF = 4.685


class LossError(Exception):
    def __init__(self, message="Loss computation failed"):
        super().__init__(message)


class ShapeMismatchError(LossError):
    def __init__(self, message="Loss arguments have different shapes"):
        super().__init__(message)


class ThresholdNotSetError(LossError):
    def __init__(self, message="TOR loss needs epsilon_outlier; compute it before training"):
        super().__init__(message)


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    details: Dict[str, Any] = field(default_factory=dict)


class OutlierPenalty(Enum):
    SQRT_ABS = "sqrt-abs"
    ZERO = "zero"


@dataclass
class TorLossConfig:
    epsilon_outlier: Optional[float] = None
    outlier_penalty: OutlierPenalty = OutlierPenalty.SQRT_ABS

    def __post_init__(self):
        self.outlier_penalty = OutlierPenalty(self.outlier_penalty)
        if self.epsilon_outlier is not None and not self.epsilon_outlier > 0:
            raise LossError(f"epsilon_outlier must be positive, got {self.epsilon_outlier}")


@dataclass(frozen=True)
class CompositeWeights:
    c_tor: float = 1.0
    c_d: float = 1.0

    def __post_init__(self):
        if self.c_tor < 0 or self.c_d < 0:
            raise LossError(f"Loss weights must be non-negative, got ({self.c_tor}, {self.c_d})")
        if self.c_tor == 0 and self.c_d == 0:
            raise LossError("Loss weights c_TOR and c_D cannot both be zero")


def _prepare(*arrays: Any) -> list:
    prepared = [np.asarray(a, dtype=np.float64) for a in arrays]
    shape = prepared[0].shape
    for other in prepared[1:]:
        if other.shape != shape:
            raise ShapeMismatchError(f"Shapes differ: {shape} vs {other.shape}")
    if prepared[0].size == 0:
        raise LossError("Loss of an empty batch is undefined")
    return prepared


def l1_loss(pred: np.ndarray, target: np.ndarray) -> LossResult:
    pred, target = _prepare(pred, target)
    diff = pred - target
    return LossResult(float(np.mean(np.abs(diff))), np.sign(diff) / diff.size)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> LossResult:
    pred, target = _prepare(pred, target)
    diff = pred - target
    return LossResult(float(np.mean(diff * diff)), 2.0 * diff / diff.size)


def tor_loss(student_pred: np.ndarray, teacher_pred: np.ndarray, target: np.ndarray,
             config: TorLossConfig) -> LossResult:
    """
    Teacher outlier rejection.

    Samples with |t - R_t| < epsilon are inliers and get (R_s - t)^2.
    The rest get a weak pull toward the teacher, sqrt(|R_s - R_t|), or
    nothing at all with the zero penalty. The branch never depends on R_s.
    """
    if config.epsilon_outlier is None:
        raise ThresholdNotSetError()
    r_s, r_t, t = _prepare(student_pred, teacher_pred, target)
    n = r_s.size

    inlier = np.abs(t - r_t) < config.epsilon_outlier
    per_sample = np.zeros_like(r_s)
    grad = np.zeros_like(r_s)

    diff = r_s - t
    per_sample[inlier] = diff[inlier] ** 2
    grad[inlier] = 2.0 * diff[inlier]

    outlier = ~inlier
    if config.outlier_penalty is OutlierPenalty.SQRT_ABS and np.any(outlier):
        gap = (r_s - r_t)[outlier]
        root = np.sqrt(np.abs(gap))
        per_sample[outlier] = root
        # zero subgradient at the kink
        safe_root = np.where(root > 0, root, 1.0)
        grad[outlier] = np.where(root > 0, np.sign(gap) / (2.0 * safe_root), 0.0)

    return LossResult(
        float(per_sample.mean()),
        grad / n,
        {"inlier_mask": inlier, "outlier_fraction": float(outlier.mean())},
    )


def tbr_loss(student_pred: np.ndarray, teacher_pred: np.ndarray, target: np.ndarray,
             margin: float = 0.0) -> LossResult:
    """Squared error, switched off once the student beats the teacher by the margin."""
    if margin < 0:
        raise LossError(f"TBR margin must be non-negative, got {margin}")
    r_s, r_t, t = _prepare(student_pred, teacher_pred, target)
    student_err = (r_s - t) ** 2
    teacher_err = (r_t - t) ** 2
    active = student_err + margin > teacher_err
    per_sample = np.where(active, student_err, 0.0)
    grad = np.where(active, 2.0 * (r_s - t), 0.0) / r_s.size
    return LossResult(float(per_sample.mean()), grad, {"active_fraction": float(active.mean())})


def tukey_robust_loss(pred: np.ndarray, target: np.ndarray, scale: Optional[float] = None,
                      cutoff: float = TUKEY_CUTOFF) -> LossResult:
    """
    Tukey biweight on MAD-normalized residuals.

    When no scale is given it is estimated from this batch's residuals and
    treated as a constant for the gradient.
    """
    pred, target = _prepare(pred, target)
    residual = pred - target
    if scale is None:
        scale = mad_sigma(residual)
    if not scale > 0:
        raise DegenerateScaleError(f"Tukey scale must be positive, got {scale}")

    r = residual / scale
    inside = np.abs(r) < cutoff
    plateau = cutoff * cutoff / 6.0
    weight = 1.0 - (r / cutoff) ** 2

    per_sample = np.where(inside, plateau * (1.0 - weight ** 3), plateau)
    d_rho = np.where(inside, r * weight ** 2, 0.0)
    grad = d_rho / scale / residual.size
    return LossResult(float(per_sample.mean()), grad, {"scale": float(scale), "inlier_fraction": float(inside.mean())})


def composite_loss(tor: LossResult, l_d: LossResult, weights: CompositeWeights) -> LossResult:
    """c_TOR * L_TOR + c_D * L_D; the gradient has one column per head (TOR head first)."""
    tor_grad = np.asarray(tor.grad, dtype=np.float64).reshape(-1, 1)
    ld_grad = np.asarray(l_d.grad, dtype=np.float64).reshape(-1, 1)
    if tor_grad.shape != ld_grad.shape:
        raise ShapeMismatchError("Composite components were computed on different batches")
    value = weights.c_tor * tor.value + weights.c_d * l_d.value
    grad = np.hstack([weights.c_tor * tor_grad, weights.c_d * ld_grad])
    details = {"tor": tor.value, "l_d": l_d.value}
    details.update({f"tor_{k}": v for k, v in tor.details.items() if k != "inlier_mask"})
    return LossResult(float(value), grad, details)


LOSS_FUNCTIONS = {
    "l1": l1_loss,
    "mse": mse_loss,
}


def get_pointwise_loss(name: str):
    if name not in LOSS_FUNCTIONS:
        raise LossError(f"Unknown loss '{name}', choose from {sorted(LOSS_FUNCTIONS)}")
    return LOSS_FUNCTIONS[name]
