"""
Experiment configuration.

A config is a plain nested dict merged over a named preset, the same way the
pipeline presets are built elsewhere in this package. YAML files load into the
same tree. validate() reports every problem at once.
"""

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from ..data import DEFAULT_X_RANGE, DatasetSpec
from ..losses import LOSS_FUNCTIONS, CompositeWeights, LossError, OutlierPenalty
from ..models import DEFAULT_BLOCK_ORDER, STUDENT_HIDDEN, TEACHER_HIDDEN
from ..robust_stats import SQRT_2PI
from ..stages.trial_stages import TrialSpec
from ..training import THRESHOLD_CADENCES, ROBUST_SCALE_CADENCES, TrainConfig
from ..variants import TOR_VARIANTS, MethodVariant, VariantError, VariantTag

CELL_OVERRIDE_KEYS = ("c_tor", "c_d", "alpha", "epsilon", "margin")
SWEEP_MODES = ("epsilon", "alpha")
METRICS = ("clean", "noisy")


class ConfigValidationError(Exception):
    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("Invalid experiment config:\n  - " + "\n  - ".join(self.violations))


DEFAULT_CONFIG: Dict[str, Any] = {
    "name": "default",
    "master_seed": 0,
    "trials": 20,
    "workers": 0,
    "output_dir": "results",
    "metric": "clean",
    "dataset": {
        "source": "generator",
        "path": None,
        "n": 100_000,
        "x_range": list(DEFAULT_X_RANGE),
        "test_fraction": 0.1,
        "fresh_noise_per_trial": True,
        "shared_x": True,
        "schema": None,
    },
    "noise_stds": [0.0, 0.5, 1.0, 3.0, 5.0],
    "variants": [tag.value for tag in VariantTag],
    "threshold": {
        "alpha": 1.0,
        "epsilon": None,
        "sigma_override": None,
        "cadence": "once",
        "sweep": None,
    },
    "weights": {"c_tor": 1.0, "c_d": 1.0},
    "margin": 0.0,
    "outlier_penalty": OutlierPenalty.SQRT_ABS.value,
    "ld_loss": "l1",
    "std_overrides": {},
    "teacher": {
        "epochs": 100,
        "batch_size": 1000,
        "base_lr": 1e-3,
        "lr_drop_epochs": [40, 80],
        "lr_drop_factor": 0.1,
        "hidden_width": TEACHER_HIDDEN,
        "dropout_rate": 0.5,
        "block_order": list(DEFAULT_BLOCK_ORDER),
        "loss": "l1",
        "checkpoint": None,
        "save_checkpoints": True,
    },
    "student": {
        "epochs": 100,
        "batch_size": 1000,
        "base_lr": 1e-3,
        "lr_drop_epochs": [70],
        "lr_drop_factor": 0.1,
        "hidden_width": STUDENT_HIDDEN,
        "dropout_rate": 0.5,
        "block_order": list(DEFAULT_BLOCK_ORDER),
        "teacher_dropout_at_distill": False,
        "robust_scale_cadence": "batch",
    },
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "default": {},
    "table1": {
        "name": "table1",
        "std_overrides": {
            0.0: {"c_tor": 1.0, "c_d": 1.0, "alpha": 1.0},
            0.5: {"c_tor": 1.0, "c_d": 1.0, "alpha": 2.0},
            1.0: {"c_tor": 10.0, "c_d": 1.0, "alpha": 2.0},
            3.0: {"c_tor": 10.0, "c_d": 1.0, "alpha": 1.0},
            5.0: {"c_tor": 1.0, "c_d": 1.0, "alpha": 2.0},
        },
    },
    "table0": {
        "name": "table0",
        "dataset": {"n": 10_000},
        "noise_stds": [3.0],
        "variants": ["student-l1", "only-tor"],
        "threshold": {
            "sigma_override": 3.0,
            "sweep": {"mode": "epsilon", "values": [6.0, 7.0, 8.0, 9.0]},
        },
        "teacher": {"batch_size": 250},
        "student": {"batch_size": 250},
    },
    "smoke": {
        "name": "smoke",
        "trials": 2,
        "workers": 1,
        "dataset": {"n": 400},
        "noise_stds": [0.0, 3.0],
        "variants": ["teacher", "student-l1", "ours-full"],
        "teacher": {"epochs": 3, "batch_size": 100, "lr_drop_epochs": [2], "hidden_width": 32},
        "student": {"epochs": 3, "batch_size": 100, "lr_drop_epochs": [2], "hidden_width": 8},
    },
}


def deep_merge(base: Dict[str, Any], override: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key != "std_overrides":
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def deterministic_seed(*parts: object) -> int:
    key = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]
    return int(digest, 16) & 0x7FFFFFFF


@dataclass(frozen=True)
class CellSpec:
    """One table cell: a noise level and a fully resolved method variant."""

    noise_std: float
    variant: MethodVariant

    @property
    def key(self) -> str:
        v = self.variant
        eps = "auto" if v.epsilon is None else f"{v.epsilon:g}"
        return (f"std={self.noise_std:g}|variant={v.tag.value}|alpha={v.alpha:g}|eps={eps}"
                f"|c_tor={v.c_tor:g}|c_d={v.c_d:g}|margin={v.margin:g}")

    def to_dict(self) -> Dict[str, Any]:
        v = self.variant
        return {
            "noise_std": self.noise_std,
            "variant": v.tag.value,
            "alpha": v.alpha,
            "epsilon": v.epsilon,
            "c_tor": v.c_tor,
            "c_d": v.c_d,
            "margin": v.margin,
        }


class ExperimentConfig:

    def __init__(self, tree: Optional[Dict[str, Any]] = None):
        self.tree = deep_merge(DEFAULT_CONFIG, tree)

    @classmethod
    def from_yaml(cls, path: Union[str, Path], preset: Optional[str] = None,
                  default_preset: str = "default") -> 'ExperimentConfig':
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigValidationError([f"{path}: top level must be a mapping"])
        file_preset = loaded.pop("preset", None)
        return create_experiment_config(preset or file_preset or default_preset, loaded)

    def to_yaml(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.tree, f, default_flow_style=False, sort_keys=False)
        return path

    def __getitem__(self, key: str) -> Any:
        return self.tree[key]

    @property
    def trials(self) -> int:
        return int(self.tree["trials"])

    @property
    def master_seed(self) -> int:
        return int(self.tree["master_seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.tree["output_dir"])

    @property
    def workers(self) -> int:
        workers = int(self.tree["workers"])
        return workers if workers > 0 else (os.cpu_count() or 1)

    @property
    def metric(self) -> str:
        return self.tree["metric"]

    def config_hash(self) -> str:
        canonical = json.dumps(self.tree, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def with_overrides(self, **overrides: Any) -> 'ExperimentConfig':
        """CLI-style flat overrides; None means 'keep the config value'."""
        return ExperimentConfig(deep_merge(self.tree, {k: v for k, v in overrides.items() if v is not None}))

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(**self.tree["dataset"])

    def _std_override(self, noise_std: float) -> Dict[str, Any]:
        for key, override in (self.tree.get("std_overrides") or {}).items():
            if math.isclose(float(key), noise_std):
                return override or {}
        return {}

    def variant_for(self, tag: str, noise_std: float, sweep_value: Optional[float] = None) -> MethodVariant:
        threshold = self.tree["threshold"]
        params = {
            "c_tor": self.tree["weights"]["c_tor"],
            "c_d": self.tree["weights"]["c_d"],
            "alpha": threshold["alpha"],
            "epsilon": threshold["epsilon"],
            "margin": self.tree["margin"],
        }
        params.update(self._std_override(noise_std))
        if sweep_value is not None:
            mode = threshold["sweep"]["mode"]
            params[mode] = sweep_value
            if mode == "alpha":
                params["epsilon"] = None
        return MethodVariant(
            tag=VariantTag(tag),
            outlier_penalty=self.tree["outlier_penalty"],
            ld_loss=self.tree["ld_loss"],
            **{k: (float(v) if v is not None else None) for k, v in params.items()},
        )

    def cells(self) -> List[CellSpec]:
        sweep = self.tree["threshold"].get("sweep")
        cells = []
        for noise_std in self.tree["noise_stds"]:
            for tag in self.tree["variants"]:
                if sweep and VariantTag(tag) in TOR_VARIANTS:
                    for value in sweep["values"]:
                        cells.append(CellSpec(float(noise_std), self.variant_for(tag, float(noise_std), value)))
                else:
                    cells.append(CellSpec(float(noise_std), self.variant_for(tag, float(noise_std))))
        return cells

    def _train_kwargs(self, section: str) -> Dict[str, Any]:
        s = self.tree[section]
        return dict(
            epochs=int(s["epochs"]),
            batch_size=int(s["batch_size"]),
            base_lr=float(s["base_lr"]),
            lr_drop_epochs=list(s["lr_drop_epochs"]),
            lr_drop_factor=float(s["lr_drop_factor"]),
            hidden_width=int(s["hidden_width"]),
            dropout_rate=float(s["dropout_rate"]),
            block_order=list(s["block_order"]),
        )

    def teacher_train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig.for_teacher(seed=seed, teacher_loss=self.tree["teacher"]["loss"],
                                       **self._train_kwargs("teacher"))

    def student_train_config(self, variant: MethodVariant, seed: int = 0) -> TrainConfig:
        student = self.tree["student"]
        threshold = self.tree["threshold"]
        return TrainConfig.for_student(
            variant,
            seed=seed,
            sigma_override=threshold["sigma_override"],
            threshold_cadence=threshold["cadence"],
            robust_scale_cadence=student["robust_scale_cadence"],
            teacher_dropout_at_distill=bool(student["teacher_dropout_at_distill"]),
            **self._train_kwargs("student"),
        )

    def trial_spec(self, cell: CellSpec, trial: int) -> TrialSpec:
        """Seeds depend only on (master seed, cell identity, trial index)."""
        master = self.master_seed
        dataset = self.dataset_spec()
        data_parts = ("data", f"{cell.noise_std:g}") + ((trial,) if dataset.fresh_noise_per_trial else ())
        return TrialSpec(
            cell_key=cell.key,
            noise_std=cell.noise_std,
            variant=cell.variant,
            trial=trial,
            seed=deterministic_seed(master, cell.key, trial),
            data_seed=deterministic_seed(master, *data_parts),
            split_seed=deterministic_seed(master, "split", f"{cell.noise_std:g}", trial),
            x_seed=deterministic_seed(master, "x") if dataset.shared_x else None,
            dataset=dataset,
            teacher_config=self.teacher_train_config(
                deterministic_seed(master, "teacher", f"{cell.noise_std:g}", trial)),
            student_config=self.student_train_config(cell.variant, deterministic_seed(master, cell.key, trial)),
        )

    def validate(self) -> 'ExperimentConfig':
        violations: List[str] = []
        tree = self.tree

        for key in tree:
            if key not in DEFAULT_CONFIG:
                violations.append(f"unknown key '{key}'")

        if not isinstance(tree["trials"], int) or tree["trials"] < 1:
            violations.append(f"trials must be an integer >= 1, got {tree['trials']!r}")
        if not isinstance(tree["workers"], int) or tree["workers"] < 0:
            violations.append(f"workers must be an integer >= 0, got {tree['workers']!r}")
        if not isinstance(tree["master_seed"], int):
            violations.append(f"master_seed must be an integer, got {tree['master_seed']!r}")
        if tree["metric"] not in METRICS:
            violations.append(f"metric must be one of {METRICS}, got {tree['metric']!r}")

        stds = tree["noise_stds"]
        if not isinstance(stds, list) or not stds:
            violations.append("noise_stds must be a non-empty list")
        elif any(not isinstance(s, (int, float)) or s < 0 for s in stds):
            violations.append(f"noise_stds must be non-negative numbers, got {stds}")

        variants = tree["variants"]
        if not isinstance(variants, list) or not variants:
            violations.append("variants must be a non-empty list")
            variants = []
        known_tags = {tag.value for tag in VariantTag}
        for tag in variants:
            if tag not in known_tags:
                violations.append(f"unknown variant '{tag}'")

        violations.extend(self._validate_dataset())
        violations.extend(self._validate_threshold())
        for section in ("teacher", "student"):
            violations.extend(self._validate_training(section))

        if tree["outlier_penalty"] not in {p.value for p in OutlierPenalty}:
            violations.append(f"unknown outlier_penalty '{tree['outlier_penalty']}'")
        if tree["ld_loss"] not in LOSS_FUNCTIONS:
            violations.append(f"ld_loss must be one of {sorted(LOSS_FUNCTIONS)}")

        for std_key, override in (tree.get("std_overrides") or {}).items():
            try:
                float(std_key)
            except (TypeError, ValueError):
                violations.append(f"std_overrides key {std_key!r} is not a number")
            for key in (override or {}):
                if key not in CELL_OVERRIDE_KEYS:
                    violations.append(f"std_overrides[{std_key}] has unknown key '{key}'")

        if not violations:
            violations.extend(self._validate_cells())

        if violations:
            raise ConfigValidationError(violations)
        return self

    def _validate_dataset(self) -> List[str]:
        violations = []
        dataset = self.tree["dataset"]
        for key in dataset:
            if key not in DEFAULT_CONFIG["dataset"]:
                violations.append(f"dataset has unknown key '{key}'")
        if dataset["source"] not in ("generator", "file"):
            violations.append(f"dataset.source must be 'generator' or 'file', got {dataset['source']!r}")
        elif dataset["source"] == "file":
            if not dataset["path"]:
                violations.append("dataset.path is required when dataset.source is 'file'")
            elif not Path(dataset["path"]).exists():
                violations.append(f"dataset.path does not exist: {dataset['path']}")
            if len(self.tree["noise_stds"] or []) != 1:
                violations.append("a file dataset carries its own noise; give exactly one noise_stds label")
        if not isinstance(dataset["n"], int) or dataset["n"] < 2:
            violations.append(f"dataset.n must be an integer >= 2, got {dataset['n']!r}")
        if not 0.0 < float(dataset["test_fraction"]) < 1.0:
            violations.append(f"dataset.test_fraction must lie in (0, 1), got {dataset['test_fraction']}")
        x_range = dataset["x_range"]
        if not isinstance(x_range, (list, tuple)) or len(x_range) != 2 or not x_range[1] > x_range[0]:
            violations.append(f"dataset.x_range must be an increasing pair, got {x_range!r}")
        return violations

    def _validate_threshold(self) -> List[str]:
        violations = []
        threshold = self.tree["threshold"]
        if not threshold["alpha"] or threshold["alpha"] <= 0:
            violations.append(f"threshold.alpha must be positive, got {threshold['alpha']!r}")
        for key in ("epsilon", "sigma_override"):
            if threshold[key] is not None and threshold[key] <= 0:
                violations.append(f"threshold.{key} must be positive when set, got {threshold[key]!r}")
        if threshold["cadence"] not in THRESHOLD_CADENCES:
            violations.append(f"threshold.cadence must be one of {THRESHOLD_CADENCES}")
        sweep = threshold.get("sweep")
        if sweep is not None:
            if not isinstance(sweep, dict) or sweep.get("mode") not in SWEEP_MODES:
                violations.append(f"threshold.sweep.mode must be one of {SWEEP_MODES}")
            elif not sweep.get("values") or any(v is None or v <= 0 for v in sweep["values"]):
                violations.append("threshold.sweep.values must be a non-empty list of positive numbers")
        weights = self.tree["weights"]
        try:
            CompositeWeights(float(weights["c_tor"]), float(weights["c_d"]))
        except (LossError, KeyError, TypeError, ValueError) as e:
            violations.append(f"weights: {e}")
        if self.tree["margin"] < 0:
            violations.append(f"margin must be non-negative, got {self.tree['margin']}")
        return violations

    def _validate_training(self, section: str) -> List[str]:
        violations = []
        s = self.tree[section]
        for key in s:
            if key not in DEFAULT_CONFIG[section]:
                violations.append(f"{section} has unknown key '{key}'")
        if not isinstance(s["epochs"], int) or s["epochs"] < 0:
            violations.append(f"{section}.epochs must be a non-negative integer, got {s['epochs']!r}")
        if not isinstance(s["batch_size"], int) or s["batch_size"] < 1:
            violations.append(f"{section}.batch_size must be a positive integer, got {s['batch_size']!r}")
        if not s["base_lr"] or s["base_lr"] <= 0:
            violations.append(f"{section}.base_lr must be positive, got {s['base_lr']!r}")
        if not 0.0 < s["lr_drop_factor"] < 1.0:
            violations.append(f"{section}.lr_drop_factor must lie in (0, 1), got {s['lr_drop_factor']}")
        if not isinstance(s["hidden_width"], int) or s["hidden_width"] < 1:
            violations.append(f"{section}.hidden_width must be a positive integer, got {s['hidden_width']!r}")
        if not 0.0 <= s["dropout_rate"] < 1.0:
            violations.append(f"{section}.dropout_rate must lie in [0, 1), got {s['dropout_rate']}")
        if sorted(s["block_order"]) != sorted(DEFAULT_BLOCK_ORDER):
            violations.append(f"{section}.block_order must be a permutation of {list(DEFAULT_BLOCK_ORDER)}")
        if section == "teacher":
            if s["loss"] not in LOSS_FUNCTIONS:
                violations.append(f"teacher.loss must be one of {sorted(LOSS_FUNCTIONS)}")
            if s["checkpoint"] and not Path(s["checkpoint"]).exists():
                violations.append(f"teacher.checkpoint does not exist: {s['checkpoint']}")
        else:
            if s["robust_scale_cadence"] not in ROBUST_SCALE_CADENCES:
                violations.append(f"student.robust_scale_cadence must be one of {ROBUST_SCALE_CADENCES}")
        return violations

    def _validate_cells(self) -> List[str]:
        violations = []
        sigma = self.tree["threshold"]["sigma_override"]
        batch_size = self.tree["student"]["batch_size"]
        try:
            cells = self.cells()
        except (VariantError, LossError, ValueError, TypeError) as e:
            return [f"cannot resolve cells: {e}"]
        for cell in cells:
            v = cell.variant
            if v.uses_tor and sigma is not None and v.epsilon is None:
                ratio = SQRT_2PI * sigma * v.alpha / batch_size
                if not 0.0 < ratio < 1.0:
                    violations.append(f"{cell.key}: threshold undefined, sqrt(2*pi)*sigma*alpha/B = {ratio:.4g}")
        return violations


def create_experiment_config(preset: str = "default",
                             custom_config: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    if preset not in PRESETS:
        raise ConfigValidationError([f"unknown preset '{preset}', choose from {sorted(PRESETS)}"])
    tree = deep_merge(PRESETS[preset], custom_config)
    return ExperimentConfig(tree)
