"""
Robust scale estimation and the tail-region outlier threshold.

A residual is treated as an outlier when the expected number of samples per
batch at least that far from the prediction, under a Gaussian of scale sigma,
drops below alpha:

    B * N(eps | 0, sigma) = alpha
    eps = sigma * sqrt(-2 ln(sqrt(2 pi) * sigma * alpha / B))

sigma is estimated from residuals as 1.4826 * MAD.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Protocol, Sequence, Union

import numpy as np

MAD_TO_SIGMA = 1.4826
SQRT_2PI = math.sqrt(2.0 * math.pi)


class RobustStatsError(Exception):
    def __init__(self, message="Robust statistics error occurred"):
        super().__init__(message)


class EmptyInputError(RobustStatsError):
    def __init__(self, message="Cannot compute a statistic of an empty vector"):
        super().__init__(message)


class DegenerateScaleError(RobustStatsError):
    def __init__(self, message="Residuals have zero spread (sigma = 0)"):
        super().__init__(message)


class ThresholdDomainError(RobustStatsError):
    def __init__(self, ratio: float):
        self.ratio = ratio
        super().__init__(
            f"Outlier threshold undefined: sqrt(2*pi)*sigma*alpha/B = {ratio:.6g} must lie in (0, 1)"
        )


@dataclass(frozen=True)
class ResidualSet:
    residuals: np.ndarray
    source: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.residuals, dtype=np.float64).ravel()
        if values.size == 0:
            raise EmptyInputError("Residual set is empty")
        if not np.all(np.isfinite(values)):
            raise RobustStatsError("Residual set contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "residuals", values)

    def __len__(self) -> int:
        return self.residuals.size


def median(values: Union[Sequence[float], np.ndarray]) -> float:
    array = np.asarray(values, dtype=np.float64).ravel()
    if array.size == 0:
        raise EmptyInputError()
    return float(np.median(array))


def mad_sigma(residuals: Union[ResidualSet, Sequence[float], np.ndarray]) -> float:
    if not isinstance(residuals, ResidualSet):
        residuals = ResidualSet(np.asarray(residuals, dtype=np.float64))
    xi = residuals.residuals
    mad = float(np.median(np.abs(xi - np.median(xi))))
    if mad == 0.0:
        raise DegenerateScaleError(
            f"MAD is zero over {xi.size} residuals; at least half of them are identical"
        )
    return MAD_TO_SIGMA * mad


def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise RobustStatsError(f"{name} must be positive, got {value}")


def epsilon_outlier(sigma: float, alpha: float, batch_size: int) -> float:
    _check_positive(sigma=sigma, alpha=alpha, batch_size=batch_size)
    ratio = SQRT_2PI * sigma * alpha / batch_size
    if not 0.0 < ratio < 1.0:
        raise ThresholdDomainError(ratio)
    return sigma * math.sqrt(-2.0 * math.log(ratio))


def expected_tail_count(epsilon: float, sigma: float, batch_size: float) -> float:
    _check_positive(sigma=sigma)
    return batch_size * math.exp(-epsilon * epsilon / (2.0 * sigma * sigma)) / (sigma * SQRT_2PI)


def two_tail_mass(epsilon: float, sigma: float) -> float:
    """Probability that a zero-mean Gaussian sample lands at or beyond +-epsilon."""
    _check_positive(sigma=sigma)
    return math.erfc(epsilon / (sigma * math.sqrt(2.0)))


class TailModel(Protocol):
    """Noise model used to turn (scale, alpha, B) into a residual threshold."""

    def threshold(self, sigma: float, alpha: float, batch_size: int) -> float:
        ...

    def expected_count(self, epsilon: float, sigma: float, batch_size: int) -> float:
        ...

    def density(self, x: np.ndarray, sigma: float) -> np.ndarray:
        ...


class GaussianTail:

    def threshold(self, sigma: float, alpha: float, batch_size: int) -> float:
        return epsilon_outlier(sigma, alpha, batch_size)

    def expected_count(self, epsilon: float, sigma: float, batch_size: int) -> float:
        return expected_tail_count(epsilon, sigma, batch_size)

    def density(self, x: np.ndarray, sigma: float) -> np.ndarray:
        _check_positive(sigma=sigma)
        x = np.asarray(x, dtype=np.float64)
        return np.exp(-x * x / (2.0 * sigma * sigma)) / (sigma * SQRT_2PI)


@dataclass(frozen=True)
class OutlierThreshold:
    sigma_hat: float
    alpha: float
    batch_size: int
    epsilon_outlier: float
    sigma_source: str = "mad"

    @classmethod
    def from_sigma(cls, sigma: float, alpha: float, batch_size: int,
                   sigma_source: str = "fixed", tail: Optional[TailModel] = None) -> 'OutlierThreshold':
        tail = tail or GaussianTail()
        return cls(
            sigma_hat=float(sigma),
            alpha=float(alpha),
            batch_size=int(batch_size),
            epsilon_outlier=tail.threshold(sigma, alpha, batch_size),
            sigma_source=sigma_source,
        )

    @classmethod
    def from_residuals(cls, residuals: ResidualSet, alpha: float, batch_size: int,
                       sigma_override: Optional[float] = None,
                       tail: Optional[TailModel] = None) -> 'OutlierThreshold':
        if sigma_override is not None:
            return cls.from_sigma(sigma_override, alpha, batch_size, "fixed", tail)
        return cls.from_sigma(mad_sigma(residuals), alpha, batch_size, "mad", tail)

    @classmethod
    def from_epsilon(cls, epsilon: float, sigma: float, batch_size: int,
                     sigma_source: str = "fixed") -> 'OutlierThreshold':
        """Fix epsilon directly and record the expectation value it implies."""
        _check_positive(epsilon=epsilon)
        return cls(
            sigma_hat=float(sigma),
            alpha=expected_tail_count(epsilon, sigma, batch_size),
            batch_size=int(batch_size),
            epsilon_outlier=float(epsilon),
            sigma_source=sigma_source,
        )

    def to_dict(self) -> Dict[str, Union[float, int, str]]:
        return {
            "sigma_hat": self.sigma_hat,
            "alpha": self.alpha,
            "batch_size": self.batch_size,
            "epsilon_outlier": self.epsilon_outlier,
            "sigma_source": self.sigma_source,
        }
