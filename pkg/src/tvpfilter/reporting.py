"""Serialization of run outputs and cross-run comparison tables.

Records go to CSV (one row per observation, full-precision repr floats,
versioned header comment); run summaries go to JSON. The summarize table
reads summary JSONs, orders fixed-drift runs by their drift constant, and
appends mean/std aggregate rows for replicate groups sharing a name.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

RECORDS_HEADER = "# tvpfilter-records v1"
_STAT_SUFFIXES = ("mean", "std", "lo95", "lo68", "hi68", "hi95")

TABLE_COLUMNS = (
    "name",
    "seed",
    "kind",
    "sigma_e",
    "rmse_theta",
    "rmse_state",
    "cov68_theta",
    "cov95_theta",
    "retention_min",
    "retention_median",
    "sigma_final_mean",
    "sigma_final_lo95",
    "sigma_final_hi95",
    "degenerate_steps",
)


def _block_columns(prefix: str) -> list[str]:
    return [f"{prefix}_{s}" for s in _STAT_SUFFIXES]


def records_columns(dim_state: int, theta_names, sigma_labels) -> list[str]:
    cols = ["t", "retention", "degenerate"]
    for i in range(dim_state):
        cols += _block_columns(f"x{i + 1}")
    for name in theta_names:
        cols += _block_columns(f"theta_{name}")
    for label in sigma_labels:
        cols += _block_columns(f"sigma_{label}")
    return cols


def _block_values(mean, std, bands, k) -> list[float]:
    return [mean[k], std[k], bands[k, 0], bands[k, 1], bands[k, 2], bands[k, 3]]


def write_records_csv(path, records, theta_names, sigma_labels) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim_state = records[0].state_mean.shape[0] if records else 0
    with path.open("w", newline="") as fh:
        fh.write(RECORDS_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(records_columns(dim_state, theta_names, sigma_labels))
        for rec in records:
            row: list = [repr(rec.t), repr(rec.retention), int(rec.degenerate)]
            for i in range(dim_state):
                row += [repr(float(v)) for v in _block_values(rec.state_mean, rec.state_std, rec.state_q, i)]
            for i in range(len(theta_names)):
                row += [repr(float(v)) for v in _block_values(rec.theta_mean, rec.theta_std, rec.theta_q, i)]
            for i in range(len(sigma_labels)):
                row += [repr(float(v)) for v in _block_values(rec.sigma_mean, rec.sigma_std, rec.sigma_q, i)]
            writer.writerow(row)
    return path


def read_records_csv(path):
    """Read a records CSV into (column names, float matrix)."""
    path = Path(path)
    with path.open() as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows:
        raise ConfigurationError(f"records file {path} is empty")
    return rows[0], np.array(rows[1:], dtype=float)


def write_summary_json(path, summary) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = asdict(summary)
    doc["schema_version"] = 1
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def read_summary_json(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read run summary {path}: {exc}") from exc
    required = {"name", "kind", "seed", "rmse_theta", "rmse_states", "retention_min"}
    if doc.get("schema_version") != 1 or not required.issubset(doc):
        raise ConfigurationError(f"{path} is not a version-1 run summary")
    return doc


def _mean_of(values) -> float:
    vals = list(values)
    return float(np.mean(vals)) if vals else math.nan


def summary_row(doc: dict) -> dict:
    """Flatten one run-summary document into a comparison-table row."""
    drift = doc.get("drift_final") or {}
    sigma_stats = list(drift.values())
    return {
        "name": doc["name"],
        "seed": doc["seed"],
        "kind": doc["kind"],
        "sigma_e": doc.get("sigma_e_fixed"),
        "rmse_theta": _mean_of(doc["rmse_theta"].values()),
        "rmse_state": _mean_of(doc["rmse_states"].values()),
        "cov68_theta": _mean_of(doc["coverage68_theta"].values()),
        "cov95_theta": _mean_of(doc["coverage95_theta"].values()),
        "retention_min": doc["retention_min"],
        "retention_median": doc["retention_median"],
        "sigma_final_mean": _mean_of(s["mean"] for s in sigma_stats),
        "sigma_final_lo95": _mean_of(s["lo95"] for s in sigma_stats),
        "sigma_final_hi95": _mean_of(s["hi95"] for s in sigma_stats),
        "degenerate_steps": doc["degenerate_steps"],
    }


def _sort_key(row):
    sigma_e = row["sigma_e"]
    return (sigma_e is None, sigma_e if sigma_e is not None else 0.0, row["name"], row["seed"])


def summary_table(docs) -> list[dict]:
    """Sorted comparison rows plus mean/std aggregates per replicate group."""
    rows = sorted((summary_row(d) for d in docs), key=_sort_key)
    by_name: dict[str, list[dict]] = {}
    for row in rows:
        by_name.setdefault(row["name"], []).append(row)
    out = list(rows)
    for name, group in by_name.items():
        if len(group) < 2:
            continue
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            agg = {"name": f"{name} ({stat})", "seed": "", "kind": group[0]["kind"]}
            for col in TABLE_COLUMNS[3:]:
                vals = [g[col] for g in group if g[col] is not None and not _is_nan(g[col])]
                agg[col] = float(fn(vals)) if vals else None
            out.append(agg)
    return out


def _is_nan(v) -> bool:
    return isinstance(v, float) and math.isnan(v)


def _format_cell(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.4g}"
    return str(value)


def render_table(rows) -> str:
    """Aligned text rendering of the comparison table."""
    cells = [[_format_cell(r.get(c)) for c in TABLE_COLUMNS] for r in rows]
    widths = [
        max(len(col), *(len(row[i]) for row in cells)) if cells else len(col)
        for i, col in enumerate(TABLE_COLUMNS)
    ]
    lines = ["  ".join(c.ljust(w) for c, w in zip(TABLE_COLUMNS, widths)).rstrip()]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def write_table_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow([_format_csv(row.get(c)) for c in TABLE_COLUMNS])
    return path


def _format_csv(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value
