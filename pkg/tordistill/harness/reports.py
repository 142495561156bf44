"""
Aggregation and output files: cell statistics, the std-by-variant table,
and plottable series with a manifest.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..robust_stats import GaussianTail, mad_sigma
from ..training import TrainingTrace
from ..variants import TOR_VARIANTS, VariantTag
from .runner import TRIALS_FILE, TrialReport

TABLE_SCALE = 100.0
CELL_COLUMNS = ["cell_key", "noise_std", "variant", "alpha", "epsilon", "c_tor", "c_d", "margin"]
VARIANT_ORDER = [tag.value for tag in VariantTag]


class ReportError(Exception):
    def __init__(self, message="Report generation failed"):
        super().__init__(message)


@dataclass
class EmittedTable:
    frame: pd.DataFrame
    text: str
    csv_path: Optional[Path] = None
    text_path: Optional[Path] = None
    table_path: Optional[Path] = None


def load_trial_reports(path: Union[str, Path]) -> List[TrialReport]:
    path = Path(path)
    if path.is_dir():
        path = path / "trials" / TRIALS_FILE if (path / "trials").is_dir() else path / TRIALS_FILE
    if not path.exists():
        raise ReportError(f"No trial records at {path}")
    with open(path, "r", encoding="utf-8") as f:
        return [TrialReport.from_dict(json.loads(line)) for line in f if line.strip()]


def _unbiased_std(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else math.nan


def aggregate(reports: Iterable[TrialReport], metric: str = "clean") -> pd.DataFrame:
    """
    One row per cell: count, mean and unbiased std of per-trial MAE.
    Failed trials are counted separately and never enter the statistics.
    Cells are grouped by their full identity, so different alpha or
    weights are never pooled.
    """
    rows: Dict[str, Dict[str, Any]] = {}
    values: Dict[str, List[float]] = {}
    extras: Dict[str, Dict[str, List[float]]] = {}

    for report in reports:
        key = report.cell_key
        if key not in rows:
            rows[key] = {"cell_key": key, **report.cell, "failed": 0}
            values[key] = []
            extras[key] = {"epsilon_outlier": [], "implied_alpha": [], "sigma_hat": [], "outlier_fraction": []}
        if report.failed or report.mae(metric) is None:
            rows[key]["failed"] += 1
            continue
        values[key].append(report.mae(metric))
        for name, bucket in extras[key].items():
            value = getattr(report, name)
            if value is not None:
                bucket.append(value)

    records = []
    for key, row in rows.items():
        maes = np.asarray(values[key], dtype=np.float64)
        record = dict(row)
        record["noise_std"] = float(record["noise_std"])
        record["count"] = int(maes.size)
        record["mean"] = float(maes.mean()) if maes.size else math.nan
        record["std"] = _unbiased_std(maes)
        for name, bucket in extras[key].items():
            record[f"mean_{name}"] = float(np.mean(bucket)) if bucket else math.nan
        records.append(record)

    columns = CELL_COLUMNS + ["count", "failed", "mean", "std", "mean_epsilon_outlier",
                              "mean_implied_alpha", "mean_sigma_hat", "mean_outlier_fraction"]
    return pd.DataFrame.from_records(records, columns=columns)


def _column_label(row: pd.Series, ambiguous: bool) -> str:
    if not ambiguous:
        return row["variant"]
    if row["epsilon"] is not None and not pd.isna(row["epsilon"]):
        return f"{row['variant']} (eps={row['epsilon']:g})"
    return f"{row['variant']} (alpha={row['alpha']:g}, c={row['c_tor']:g}/{row['c_d']:g})"


def _format_csv_cell(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "failed"
    if math.isnan(std):
        return f"{mean * TABLE_SCALE:.4g}"
    return f"{mean * TABLE_SCALE:.4g} ± {std * TABLE_SCALE:.4g}"


def _format_cell(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "failed"
    if math.isnan(std):
        return f"{mean * TABLE_SCALE:.1f}"
    return f"{mean * TABLE_SCALE:.1f} ± {std * TABLE_SCALE:.1f}"


def emit_table(reports: List[TrialReport], output_dir: Optional[Union[str, Path]] = None,
               metric: str = "clean") -> EmittedTable:
    """
    Rows are noise std, columns are variants, cells are mean ± std scaled by
    10^2. The same pivot is written as table.csv (4 significant figures) and
    table.txt; full-precision aggregates go to aggregate.csv.
    """
    if not reports:
        raise ReportError("Cannot build a table from zero trial reports")
    frame = aggregate(reports, metric)

    per_column = frame.groupby(["noise_std", "variant"])["cell_key"].transform("count")
    ambiguous_variants = set(frame.loc[per_column > 1, "variant"])
    labels = [_column_label(row, row["variant"] in ambiguous_variants) for _, row in frame.iterrows()]
    frame = frame.assign(column=labels,
                         display=[_format_cell(m, s) for m, s in zip(frame["mean"], frame["std"])],
                         precise=[_format_csv_cell(m, s) for m, s in zip(frame["mean"], frame["std"])])

    order = sorted(dict.fromkeys(labels), key=lambda label: (
        VARIANT_ORDER.index(label.split(" ")[0]) if label.split(" ")[0] in VARIANT_ORDER else len(VARIANT_ORDER)
    ))

    def pivot_of(values: str) -> pd.DataFrame:
        shaped = frame.pivot(index="noise_std", columns="column", values=values).reindex(columns=order)
        shaped.index.name = "std"
        shaped.columns.name = None
        return shaped

    pivot = pivot_of("display")

    trial_counts = sorted(set(int(c) for c in frame["count"]))
    header = (f"MAE x10^2 against {metric} targets, mean ± std over "
              f"{'/'.join(str(c) for c in trial_counts)} trial(s) per cell")
    text = header + "\n" + pivot.fillna("-").to_string() + "\n"

    result = EmittedTable(frame=frame.drop(columns=["display", "precise"]), text=text)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / "aggregate.csv"
        result.text_path = out / "table.txt"
        result.table_path = out / "table.csv"
        result.frame.to_csv(result.csv_path, index=False, float_format="%.10g")
        result.text_path.write_text(text, encoding="utf-8")
        pivot_of("precise").fillna("-").to_csv(result.table_path)
    return result


class PlotSeriesWriter:
    """Writes (x, y[, ...]) series as CSV files and keeps the manifest entries."""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.entries: List[Dict[str, Any]] = []

    def write(self, name: str, frame: pd.DataFrame, x: str, y: str, kind: str,
              meta: Optional[Dict[str, Any]] = None) -> Path:
        file_name = f"{_slug(name)}.csv"
        frame.to_csv(self.output_dir / file_name, index=False, float_format="%.10g")
        self.entries.append({
            "name": name,
            "file": file_name,
            "kind": kind,
            "x": x,
            "y": y,
            "columns": list(frame.columns),
            "n_points": int(len(frame)),
            "meta": meta or {},
        })
        return self.output_dir / file_name

    def write_manifest(self) -> Path:
        path = self.output_dir / "manifest.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"series": self.entries}, f, indent=2, default=_json_default)
        return path


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name).strip("_") or "series"


def _json_default(value: Any) -> Any:
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return str(value)


def trace_frame(trace: Optional[TrainingTrace]) -> pd.DataFrame:
    if trace is None or not len(trace):
        return pd.DataFrame(columns=["epoch", "loss", "lr"])
    return pd.DataFrame.from_records(trace.records)


def residual_histogram(residuals: np.ndarray, epsilon: Optional[float] = None,
                       bins: int = 60) -> Tuple[pd.DataFrame, pd.DataFrame, Dict[str, Any]]:
    """Density histogram of teacher residuals plus the Gaussian fitted by MAD."""
    residuals = np.asarray(residuals, dtype=np.float64)
    sigma = mad_sigma(residuals)
    half_width = max(4.0 * sigma, 1.2 * epsilon if epsilon else 0.0, float(np.max(np.abs(residuals))))
    density, edges = np.histogram(residuals, bins=bins, range=(-half_width, half_width), density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    grid = np.linspace(-half_width, half_width, 200)
    histogram = pd.DataFrame({"residual": centers, "density": density})
    fitted = pd.DataFrame({"residual": grid, "density": GaussianTail().density(grid, sigma)})
    meta = {"sigma_hat": sigma, "epsilon_outlier": epsilon, "n": int(residuals.size)}
    return histogram, fitted, meta


def emit_plot_data(output_dir: Union[str, Path], reports: Optional[List[TrialReport]] = None,
                   traces: Optional[Mapping[str, Optional[TrainingTrace]]] = None,
                   residual_sets: Optional[Mapping[str, Tuple[np.ndarray, Optional[float]]]] = None,
                   metric: str = "clean") -> Path:
    writer = PlotSeriesWriter(output_dir)

    for label, trace in (traces or {}).items():
        writer.write(f"trace {label}", trace_frame(trace), x="epoch", y="loss", kind="loss-trace")

    for label, (residuals, epsilon) in (residual_sets or {}).items():
        histogram, fitted, meta = residual_histogram(residuals, epsilon)
        writer.write(f"residual histogram {label}", histogram, x="residual", y="density",
                     kind="histogram", meta=meta)
        writer.write(f"residual gaussian fit {label}", fitted, x="residual", y="density",
                     kind="curve", meta=meta)
        if epsilon is not None:
            peak = float(fitted["density"].max())
            markers = pd.DataFrame({"residual": [-epsilon, epsilon], "density": [peak, peak]})
            writer.write(f"epsilon markers {label}", markers, x="residual", y="density",
                         kind="markers", meta=meta)

    if reports:
        frame = aggregate(reports, metric)
        tor = frame[frame["variant"].isin([tag.value for tag in TOR_VARIANTS])
                    & frame["mean_epsilon_outlier"].notna()]
        for (noise_std, variant), group in tor.groupby(["noise_std", "variant"], sort=False):
            if len(group) < 2:
                continue
            curve = (group.sort_values("mean_epsilon_outlier")
                     [["mean_epsilon_outlier", "mean", "std", "count", "mean_implied_alpha"]]
                     .rename(columns={"mean_epsilon_outlier": "epsilon", "mean": "mae"})
                     .reset_index(drop=True))
            best = float(curve.loc[curve["mae"].idxmin(), "epsilon"]) if curve["mae"].notna().any() else None
            writer.write(f"mae vs epsilon {variant} std={noise_std:g}", curve, x="epsilon", y="mae",
                         kind="curve", meta={"best_epsilon": best, "metric": metric})

    return writer.write_manifest()
