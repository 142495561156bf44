"""
Logging system for the distillation toolkit.
Provides structured logging for training runs and experiment trials.
"""

import logging
import time
import json
from typing import Any, Dict, Optional


class DistillLogger:

    def __init__(self, log_level: str = "INFO"):
        self.logger = logging.getLogger("TorDistill")
        self.logger.setLevel(getattr(logging, log_level.upper()))

        if not self.logger.handlers:
            handler = logging.StreamHandler()
            formatter = logging.Formatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
            )
            handler.setFormatter(formatter)
            self.logger.addHandler(handler)

        self.run_start_time = None
        self.current_run = None

    def start_run(self, name: str) -> None:
        self.current_run = name
        self.run_start_time = time.time()
        self.logger.info(f"Starting run: '{name}'")

    def log_stage(self, stage: str, detail: str = "") -> None:
        self.logger.info(f"Stage {stage}: {detail}" if detail else f"Stage {stage}")

    def log_epoch(self, tag: str, epoch: int, lr: float, components: Dict[str, float]) -> None:
        parts = ", ".join(f"{k}={v:.6g}" for k, v in components.items())
        self.logger.debug(f"[{tag}] epoch {epoch} lr={lr:.3g} {parts}")

    def log_threshold(self, sigma_hat: float, alpha: float, batch_size: int,
                      epsilon: float, outlier_fraction: Optional[float] = None) -> None:
        msg = (f"Outlier threshold: sigma_hat={sigma_hat:.5g} alpha={alpha:.4g} "
               f"B={batch_size} epsilon={epsilon:.5g}")
        if outlier_fraction is not None:
            msg += f" flagged={outlier_fraction:.4%}"
        self.logger.info(msg)

    def log_trial(self, cell: str, trial: int, mae: Optional[float], wall_time: float) -> None:
        mae_str = f"{mae:.5g}" if mae is not None else "n/a"
        self.logger.info(f"Trial {cell}#{trial} finished in {wall_time:.2f}s: MAE={mae_str}")

    def log_error(self, error: Exception, context: str = "") -> None:
        self.logger.error(f"Error {context}: {type(error).__name__}: {str(error)}")

    def log_failure(self, reason: str) -> None:
        self.logger.warning(f"Trial marked failed: {reason}")

    def complete_run(self, summary: Any, success: bool = True) -> None:
        if self.run_start_time:
            total_time = time.time() - self.run_start_time
            summary_str = str(summary)[:200] if summary else "None"

            if success:
                self.logger.info(f"Run completed in {total_time:.3f}s: {summary_str}")
            else:
                self.logger.error(f"Run failed after {total_time:.3f}s: {summary_str}")

        self.run_start_time = None
        self.current_run = None

    def log_performance_metrics(self, metrics: Dict[str, Any]) -> None:
        self.logger.info(f"Metrics: {json.dumps(metrics, indent=2, default=str)}")


# Global logger instance
distill_logger = DistillLogger()


def get_logger() -> DistillLogger:
    return distill_logger


def set_log_level(level: str) -> None:
    distill_logger.logger.setLevel(getattr(logging, level.upper()))
