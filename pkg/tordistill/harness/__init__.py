from .config import (
    CellSpec, ConfigValidationError, DEFAULT_CONFIG, ExperimentConfig, PRESETS,
    create_experiment_config, deterministic_seed,
)
from .runner import ExperimentResult, ResultsSink, TeacherProvider, TrialReport, run_experiment, run_trial
from .reports import EmittedTable, ReportError, aggregate, emit_plot_data, emit_table, load_trial_reports

__all__ = [
    'CellSpec', 'ConfigValidationError', 'DEFAULT_CONFIG', 'ExperimentConfig', 'PRESETS',
    'create_experiment_config', 'deterministic_seed',
    'ExperimentResult', 'ResultsSink', 'TeacherProvider', 'TrialReport', 'run_experiment', 'run_trial',
    'EmittedTable', 'ReportError', 'aggregate', 'emit_plot_data', 'emit_table', 'load_trial_reports',
]
