"""
Experiment runner: every (cell, trial) pair runs the trial pipeline on a
bounded thread pool; reports flow into one synchronized append-only sink.
"""

import json
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..data import LabeledDataset
from ..logging_system import get_logger
from ..models import build_teacher, load_network
from ..nn import Network
from ..stages import TrialSpec, TrialState, build_trial_pipeline
from ..training import TrainingTrace, train_teacher
from .config import CellSpec, ExperimentConfig

TRIALS_FILE = "trials.jsonl"


@dataclass
class TrialReport:
    cell: Dict[str, Any]
    cell_key: str
    trial: int
    seed: int
    mae_noisy: Optional[float] = None
    mae_clean: Optional[float] = None
    head_mae: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    sigma_hat: Optional[float] = None
    epsilon_outlier: Optional[float] = None
    implied_alpha: Optional[float] = None
    outlier_fraction: Optional[float] = None
    wall_time: float = 0.0
    failed: bool = False
    failure_reason: Optional[str] = None
    config_hash: str = ""

    @property
    def noise_std(self) -> float:
        return float(self.cell["noise_std"])

    @property
    def variant(self) -> str:
        return self.cell["variant"]

    def mae(self, metric: str = "clean") -> Optional[float]:
        if metric == "clean" and self.mae_clean is not None:
            return self.mae_clean
        return self.mae_noisy

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrialReport':
        return cls(**data)


@dataclass
class TrialRun:
    report: TrialReport
    trace: Optional[TrainingTrace] = None
    residuals: Optional[np.ndarray] = None


class ResultsSink:
    """Append-only, thread-safe collection of trial reports mirrored to a JSON-lines file."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._reports: List[TrialReport] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, report: TrialReport) -> None:
        with self._lock:
            self._reports.append(report)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(report.to_dict(), default=float) + "\n")

    @property
    def reports(self) -> List[TrialReport]:
        with self._lock:
            return list(self._reports)

    def __len__(self) -> int:
        with self._lock:
            return len(self._reports)


class TeacherProvider:
    """
    Trains each (noise std, trial) teacher once and hands every trial its own
    copy loaded from the checkpoint, so no Network instance crosses threads.
    """

    def __init__(self, checkpoint_dir: Optional[Union[str, Path]] = None,
                 preloaded: Optional[Union[str, Path]] = None):
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
        self.preloaded = Path(preloaded) if preloaded else None
        self._guard = threading.Lock()
        self._locks: Dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._checkpoints: Dict[str, Any] = {}
        self.trained = 0

    def _lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks[key]

    def __call__(self, spec: TrialSpec, train: LabeledDataset) -> Network:
        if self.preloaded is not None:
            return load_network(self.preloaded)

        key = spec.teacher_key
        with self._lock_for(key):
            if key not in self._checkpoints:
                path = None
                if self.checkpoint_dir is not None:
                    path = self.checkpoint_dir / f"teacher_{key}.ckpt"
                outcome = train_teacher(train, spec.teacher_config, path)
                self._checkpoints[key] = outcome.checkpoint_path or outcome.network.state_dict()
                self.trained += 1
            stored = self._checkpoints[key]

        if isinstance(stored, Path):
            return load_network(stored)
        return load_network_from_state(stored, spec)


def load_network_from_state(state: Dict[str, np.ndarray], spec: TrialSpec) -> Network:
    config = spec.teacher_config
    teacher = build_teacher(config.seed, config.hidden_width, config.dropout_rate, config.block_order)
    teacher.load_state_dict(state)
    return teacher


def run_trial(spec: TrialSpec, teacher_source=None, config_hash: str = "") -> TrialRun:
    logger = get_logger()
    start = time.time()
    pipeline = build_trial_pipeline(f"trial:{spec.cell_key}#{spec.trial}")
    context = {"teacher_source": teacher_source} if teacher_source is not None else {}
    result = pipeline.process(spec, context)
    state = result.data if isinstance(result.data, TrialState) else None

    cell = CellSpec(spec.noise_std, spec.variant)
    report = TrialReport(cell=cell.to_dict(), cell_key=spec.cell_key, trial=spec.trial,
                         seed=spec.seed, config_hash=config_hash)

    if state is not None:
        report.sigma_hat = state.sigma_hat
        if state.outcome is not None and state.outcome.threshold is not None:
            threshold = state.outcome.threshold
            report.sigma_hat = threshold.sigma_hat
            report.epsilon_outlier = threshold.epsilon_outlier
            report.implied_alpha = threshold.alpha
            report.outlier_fraction = state.outcome.outlier_fraction

    if result.success:
        evaluation = state.evaluation
        report.mae_noisy = evaluation.mae_noisy
        report.mae_clean = evaluation.mae_clean
        report.head_mae = evaluation.head_mae
    else:
        report.failed = True
        report.failure_reason = result.error_message
        logger.log_failure(f"{spec.cell_key}#{spec.trial}: {result.error_message}")

    report.wall_time = time.time() - start
    logger.log_trial(spec.cell_key, spec.trial, report.mae_clean if report.mae_clean is not None
                     else report.mae_noisy, report.wall_time)

    trace = state.outcome.trace if state is not None and state.outcome is not None else None
    residuals = None
    if state is not None and state.train is not None and state.train.has_teacher:
        residuals = state.train.residuals()
    return TrialRun(report=report, trace=trace, residuals=residuals)


@dataclass
class ExperimentResult:
    reports: List[TrialReport]
    aggregate: pd.DataFrame
    output_dir: Path
    paths: Dict[str, Path] = field(default_factory=dict)

    @property
    def failed(self) -> List[TrialReport]:
        return [r for r in self.reports if r.failed]


def _ordered(runs: List[Tuple[int, TrialRun]]) -> List[TrialRun]:
    return [run for _, run in sorted(runs, key=lambda item: item[0])]


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None,
                   emit_outputs: bool = True) -> ExperimentResult:
    from .reports import aggregate, emit_plot_data, emit_table

    config.validate()
    logger = get_logger()
    logger.start_run(config["name"])
    out = config.output_dir
    config_hash = config.config_hash()

    sink = ResultsSink(out / "trials" / TRIALS_FILE if emit_outputs else None)
    provider = TeacherProvider(
        out / "checkpoints" if emit_outputs and config["teacher"]["save_checkpoints"] else None,
        preloaded=config["teacher"]["checkpoint"],
    )

    cells = config.cells()
    jobs = [(index * config.trials + trial, config.trial_spec(cell, trial))
            for index, cell in enumerate(cells) for trial in range(config.trials)]
    max_workers = workers or config.workers
    logger.log_stage("run", f"{len(cells)} cells x {config.trials} trials on {max_workers} workers")

    runs: List[Tuple[int, TrialRun]] = []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(run_trial, spec, provider, config_hash): position for position, spec in jobs}
        for future in as_completed(futures):
            run = future.result()
            sink.append(run.report)
            runs.append((futures[future], run))

    ordered = _ordered(runs)
    reports = [run.report for run in ordered]
    frame = aggregate(reports, config.metric)
    result = ExperimentResult(reports=reports, aggregate=frame, output_dir=out)

    if emit_outputs:
        if sink.path is not None:
            result.paths["trials"] = sink.path
        config.to_yaml(out / "config.yaml")
        table = emit_table(reports, out / "tables", config.metric)
        result.paths.update({"table": table.table_path, "table_csv": table.csv_path, "table_text": table.text_path})

        traces = {f"{run.report.cell_key}#0": run.trace for run in ordered
                  if run.report.trial == 0 and run.trace is not None}
        residual_sets = {}
        for run in ordered:
            if run.report.trial == 0 and run.residuals is not None:
                label = f"std={run.report.noise_std:g}"
                if label not in residual_sets or residual_sets[label][1] is None:
                    residual_sets[label] = (run.residuals, run.report.epsilon_outlier)
        manifest = emit_plot_data(out / "plots", reports=reports, traces=traces,
                                  residual_sets=residual_sets, metric=config.metric)
        result.paths["plots_manifest"] = manifest

    summary = {"cells": len(cells), "trials": len(reports), "failed": len(result.failed),
               "teachers_trained": provider.trained, "config_hash": config_hash}
    logger.log_performance_metrics(summary)
    logger.complete_run(summary, success=not result.failed)
    return result
