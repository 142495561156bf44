"""
Datasets: the noisy sinusoid generator, splitting, batching and
comma-separated import/export.
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .nn import DimensionError, Network

DEFAULT_X_RANGE = (0.0, 2.0 * math.pi)
DEFAULT_SCHEMA = {"x": "x", "t": "t", "clean": "clean", "r_t": "r_t"}


class DatasetError(Exception):
    def __init__(self, message="Dataset error occurred"):
        super().__init__(message)


class DatasetFileError(DatasetError):
    def __init__(self, message="Dataset file error"):
        super().__init__(message)


class DatasetParseError(DatasetError):
    def __init__(self, row: int, column: str, value: object):
        self.row = row
        self.column = column
        super().__init__(f"Non-numeric value {value!r} in column '{column}' at data row {row}")


def _frozen(values: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if values is None:
        return None
    array = np.array(values, dtype=np.float64).ravel()
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class LabeledDataset:
    x: np.ndarray
    t: np.ndarray
    clean: Optional[np.ndarray] = None
    teacher_predictions: Optional[np.ndarray] = None
    noise_std: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ("x", "t", "clean", "teacher_predictions"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.x.size
        for name in ("t", "clean", "teacher_predictions"):
            values = getattr(self, name)
            if values is not None and values.size != n:
                raise DatasetError(f"'{name}' has {values.size} entries, expected {n}")
        if self.noise_std < 0:
            raise DatasetError(f"noise_std must be non-negative, got {self.noise_std}")

    def __len__(self) -> int:
        return self.x.size

    @property
    def has_teacher(self) -> bool:
        return self.teacher_predictions is not None

    def subset(self, indices: np.ndarray) -> 'LabeledDataset':
        pick = lambda v: None if v is None else v[indices]
        return replace(self, x=self.x[indices], t=self.t[indices], clean=pick(self.clean),
                       teacher_predictions=pick(self.teacher_predictions))

    def with_teacher_predictions(self, predictions: np.ndarray) -> 'LabeledDataset':
        return replace(self, teacher_predictions=predictions)

    def residuals(self) -> np.ndarray:
        if self.teacher_predictions is None:
            raise DatasetError("Residuals need teacher predictions; attach them first")
        return self.t - self.teacher_predictions

    def inputs(self) -> np.ndarray:
        return self.x.reshape(-1, 1)


def make_sinusoid(n: int, noise_std: float, x_range: Tuple[float, float] = DEFAULT_X_RANGE,
                  seed: int = 0, x_seed: Optional[int] = None) -> LabeledDataset:
    """
    x ~ U(x_range), clean = sin(x), t = clean + N(0, noise_std^2).

    x_seed, when given, draws x from its own stream so several noise
    realizations can share the same inputs.
    """
    if n <= 0:
        raise DatasetError(f"n must be positive, got {n}")
    if noise_std < 0:
        raise DatasetError(f"noise_std must be non-negative, got {noise_std}")
    low, high = x_range
    if not high > low:
        raise DatasetError(f"x_range must be increasing, got {x_range}")

    x_rng = np.random.default_rng([x_seed, 0] if x_seed is not None else [seed, 0])
    noise_rng = np.random.default_rng([seed, 1])
    x = x_rng.uniform(low, high, size=n)
    clean = np.sin(x)
    t = clean + noise_rng.normal(0.0, noise_std, size=n) if noise_std > 0 else clean.copy()
    return LabeledDataset(x=x, t=t, clean=clean, noise_std=float(noise_std), seed=seed)


def train_test_split(dataset: LabeledDataset, test_fraction: float = 0.1,
                     seed: int = 0) -> Tuple[LabeledDataset, LabeledDataset]:
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise DatasetError(f"Cannot split {n} samples with test_fraction={test_fraction}")
    order = np.random.default_rng([seed, 2]).permutation(n)
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))


class BatchIterator:
    """
    Shuffled mini-batches; the order of an epoch depends only on (seed, epoch).
    Iterating yields one epoch's worth of datasets and advances the counter.
    """

    def __init__(self, dataset: LabeledDataset, batch_size: int, seed: int = 0, shuffle: bool = True):
        if batch_size <= 0:
            raise DatasetError(f"batch_size must be positive, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.epoch = 0

    def __len__(self) -> int:
        return math.ceil(len(self.dataset) / self.batch_size)

    def batch_indices(self, epoch: int) -> Iterator[np.ndarray]:
        n = len(self.dataset)
        order = (np.random.default_rng([self.seed, epoch]).permutation(n)
                 if self.shuffle else np.arange(n))
        for start in range(0, n, self.batch_size):
            yield order[start:start + self.batch_size]

    def __iter__(self) -> Iterator[LabeledDataset]:
        epoch = self.epoch
        self.epoch += 1
        for indices in self.batch_indices(epoch):
            yield self.dataset.subset(indices)


def attach_teacher_predictions(dataset: LabeledDataset, teacher: Network) -> LabeledDataset:
    if teacher.input_width != 1:
        raise DimensionError(f"Teacher must take one input column, takes {teacher.input_width}")
    outputs = teacher.predict(dataset.inputs())
    return dataset.with_teacher_predictions(outputs[:, 0])


def _parse_float(cell: str) -> float:
    try:
        value = float(cell)
    except (TypeError, ValueError):
        return math.nan
    return value if math.isfinite(value) else math.nan


def load_tabular(path: Union[str, Path], schema: Optional[Dict[str, str]] = None) -> LabeledDataset:
    """
    Read a comma-separated file. ``schema`` maps dataset fields (x, t,
    optional clean, optional r_t) to header names. A file whose first row is
    entirely numeric is read as headerless, columns in the order x, t, clean, r_t.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    if not path.exists():
        raise DatasetFileError(f"Dataset file not found: {path}")

    try:
        frame = pd.read_csv(path, header=None, dtype=str, skipinitialspace=True,
                            keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise DatasetError(f"Dataset file is empty: {path}")

    first_row = frame.iloc[0].tolist() if len(frame) else []
    if first_row and all(math.isfinite(_parse_float(cell)) for cell in first_row):
        if frame.shape[1] > len(DEFAULT_SCHEMA):
            raise DatasetError(f"Headerless file has {frame.shape[1]} columns, at most 4 are known")
        positional = ["x", "t", "clean", "r_t"][:frame.shape[1]]
        frame.columns = [DEFAULT_SCHEMA[name] for name in positional]
        schema = dict(DEFAULT_SCHEMA)
    elif first_row:
        frame.columns = [str(c).strip() for c in first_row]
        frame = frame.iloc[1:].reset_index(drop=True)
    if frame.empty:
        raise DatasetError(f"Dataset file has no data rows: {path}")

    for field_name in ("x", "t"):
        if schema[field_name] not in frame.columns:
            raise DatasetError(
                f"Column '{schema[field_name]}' for field '{field_name}' not in {list(frame.columns)}"
            )

    columns = {}
    for field_name, column in schema.items():
        if column not in frame.columns:
            continue
        raw = frame[column]
        values = raw.map(_parse_float).to_numpy(dtype=np.float64)
        bad = np.flatnonzero(np.isnan(values))
        if bad.size:
            row = int(bad[0])
            raise DatasetParseError(row, column, raw.iloc[row])
        columns[field_name] = values

    return LabeledDataset(
        x=columns["x"],
        t=columns["t"],
        clean=columns.get("clean"),
        teacher_predictions=columns.get("r_t"),
    )


def export_tabular(dataset: LabeledDataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"x": dataset.x, "t": dataset.t})
    if dataset.clean is not None:
        frame["clean"] = dataset.clean
    if dataset.teacher_predictions is not None:
        frame["r_t"] = dataset.teacher_predictions
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


@dataclass
class DatasetSpec:
    """Where trial data comes from: the sinusoid generator or a tabular file."""

    source: str = "generator"
    path: Optional[str] = None
    n: int = 100_000
    x_range: Tuple[float, float] = DEFAULT_X_RANGE
    test_fraction: float = 0.1
    fresh_noise_per_trial: bool = True
    shared_x: bool = True
    schema: Optional[Dict[str, str]] = None

    def __post_init__(self):
        self.x_range = tuple(float(v) for v in self.x_range)
        if self.source not in ("generator", "file"):
            raise DatasetError(f"dataset source must be 'generator' or 'file', got '{self.source}'")
        if self.source == "file" and not self.path:
            raise DatasetError("dataset source 'file' needs a path")


def build_dataset(spec: DatasetSpec, noise_std: float, seed: int, x_seed: Optional[int] = None) -> LabeledDataset:
    if spec.source == "file":
        loaded = load_tabular(spec.path, spec.schema)
        return replace(loaded, noise_std=float(noise_std), seed=seed)
    return make_sinusoid(spec.n, noise_std, spec.x_range, seed=seed, x_seed=x_seed)
