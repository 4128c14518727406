"""Experiment orchestration: configs, the preset registry, and run glue.

An experiment config is a JSON tree with a ``data`` section (which model,
which grid, how much noise, which seed) and an optional ``filter`` section
(which algorithm and its settings). Presets shipping with the package
reproduce each benchmark configuration; they are plain data files, loaded
here, never hard-coded values in code paths.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from statistics import median

import numpy as np

from .datagen import ObservationSet, build_dataset, load_dataset, save_dataset
from .ensemble import GaussianNoiseSpec
from .errors import ConfigurationError
from .filters import (
    ESTIMATED,
    FIXED,
    SHARED,
    DriftSpec,
    FilterConfig,
    run_filter,
)
from .models import BenchmarkModel, parse_estimate, resolve_model
from .odes import SolverSpec
from . import reporting

KINDS = ("pf-state", "pf-tvp", "pf-tvp-plus")


@dataclass(frozen=True)
class DataSettings:
    model: str
    t_end: float
    dt_obs: float
    noise_fraction: float
    seed: int


@dataclass(frozen=True)
class FilterSettings:
    kind: str
    estimate: tuple | None
    n_particles: int
    sigma_c: float
    sigma_d: float
    drift: DriftSpec | None
    solver: SolverSpec
    prior_factors: tuple
    seed: int
    restart_history: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    data: DataSettings
    filter: FilterSettings | None = None
    dataset: str | None = None


@dataclass(frozen=True)
class RunSummary:
    """Scalar quality metrics for one filter run."""

    name: str
    kind: str
    seed: int
    n_steps: int
    rmse_states: dict
    rmse_theta: dict
    coverage68_states: dict
    coverage95_states: dict
    coverage68_theta: dict
    coverage95_theta: dict
    retention_min: float
    retention_median: float
    drift_final: dict | None
    sigma_e_fixed: float | None
    degenerate_steps: int
    wall_time_s: float


def _get(doc: dict, key: str, context: str, default=_sentinel := object()):
    if key in doc:
        return doc[key]
    if default is not _sentinel:
        return default
    raise ConfigurationError(f"{context}: missing field {key!r}")


def _parse_drift(doc, context: str) -> DriftSpec | None:
    if doc is None:
        return None
    mode = _get(doc, "mode", context)
    try:
        if mode == "fixed":
            return DriftSpec.fixed(float(_get(doc, "sigma_e", context)))
        if mode == "estimated":
            return DriftSpec.estimated(
                sigma_min=float(_get(doc, "sigma_min", context)),
                sigma_max=float(_get(doc, "sigma_max", context)),
                delta=float(_get(doc, "delta", context, 0.96)),
                sharing=_get(doc, "sharing", context, SHARED),
                transform=_get(doc, "transform", context, "logit"),
            )
    except ConfigurationError as exc:
        raise ConfigurationError(f"{context}: {exc}") from exc
    raise ConfigurationError(f"{context}: unknown drift mode {mode!r}")


def _parse_solver(doc, context: str) -> SolverSpec:
    doc = doc or {}
    try:
        return SolverSpec(
            method=_get(doc, "method", context, "bdf2"),
            step=float(_get(doc, "step", context, 0.25)),
            newton_tol=float(_get(doc, "newton_tol", context, 1e-10)),
            newton_max_iter=int(_get(doc, "newton_max_iter", context, 25)),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"{context}: {exc}") from exc


def parse_config(doc: dict, name_hint: str = "config") -> ExperimentConfig:
    """Validate a config document, raising field-level messages."""
    name = _get(doc, "name", name_hint)
    data_doc = _get(doc, "data", name)
    data = DataSettings(
        model=_get(data_doc, "model", f"{name}.data"),
        t_end=float(_get(data_doc, "t_end", f"{name}.data")),
        dt_obs=float(_get(data_doc, "dt_obs", f"{name}.data")),
        noise_fraction=float(_get(data_doc, "noise_fraction", f"{name}.data")),
        seed=int(_get(data_doc, "seed", f"{name}.data")),
    )
    filt_doc = doc.get("filter")
    filt = None
    if filt_doc is not None:
        context = f"{name}.filter"
        kind = _get(filt_doc, "kind", context)
        if kind not in KINDS:
            raise ConfigurationError(f"{context}: unknown filter kind {kind!r}")
        drift = _parse_drift(filt_doc.get("drift"), f"{context}.drift")
        if kind == "pf-tvp" and (drift is None or drift.mode != FIXED):
            raise ConfigurationError(f"{context}: pf-tvp needs a fixed drift")
        if kind == "pf-tvp-plus" and (drift is None or drift.mode != ESTIMATED):
            raise ConfigurationError(f"{context}: pf-tvp-plus needs an estimated drift")
        if kind == "pf-state":
            drift = None
        factors = tuple(float(v) for v in _get(filt_doc, "prior_factors", context, (0.5, 1.5)))
        filt = FilterSettings(
            kind=kind,
            estimate=parse_estimate(filt_doc.get("estimate")),
            n_particles=int(_get(filt_doc, "n_particles", context)),
            sigma_c=float(_get(filt_doc, "sigma_c", context)),
            sigma_d=float(_get(filt_doc, "sigma_d", context)),
            drift=drift,
            solver=_parse_solver(filt_doc.get("solver"), f"{context}.solver"),
            prior_factors=factors,
            seed=int(_get(filt_doc, "seed", context)),
            restart_history=bool(filt_doc.get("restart_history", False)),
        )
    return ExperimentConfig(name=name, data=data, filter=filt, dataset=doc.get("dataset"))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc, name_hint=path.stem)


def preset_ids() -> list[str]:
    files = resources.files("tvpfilter").joinpath("presets")
    return sorted(p.name[: -len(".json")] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(preset_id: str) -> ExperimentConfig:
    res = resources.files("tvpfilter").joinpath("presets").joinpath(f"{preset_id}.json")
    if not res.is_file():
        raise ConfigurationError(f"unknown preset {preset_id!r}; known: {', '.join(preset_ids())}")
    return parse_config(json.loads(res.read_text()), name_hint=preset_id)


def data_generating_model(cfg: ExperimentConfig) -> BenchmarkModel:
    """The model with every time-varying slot driven by its truth signal."""
    return resolve_model(cfg.data.model)


def filter_model(cfg: ExperimentConfig) -> BenchmarkModel:
    """The model with only the configured slots exposed for estimation."""
    if cfg.filter is None:
        raise ConfigurationError(f"{cfg.name}: no filter section")
    return resolve_model(cfg.data.model, estimate=cfg.filter.estimate)


def make_dataset(cfg: ExperimentConfig):
    """Build the config's dataset in memory; returns (observations, meta)."""
    model = data_generating_model(cfg)
    obs, stds = build_dataset(
        model, cfg.data.t_end, cfg.data.dt_obs, cfg.data.noise_fraction, cfg.data.seed
    )
    meta = {
        "model": cfg.data.model,
        "constants": model.constants,
        "t_end": cfg.data.t_end,
        "dt_obs": cfg.data.dt_obs,
        "noise_fraction": cfg.data.noise_fraction,
        "noise_std": [float(s) for s in stds],
        "seed": cfg.data.seed,
    }
    return obs, meta


def generate_dataset(cfg: ExperimentConfig, out_path) -> Path:
    """Materialize the config's dataset as CSV + JSON sidecar (idempotent)."""
    obs, meta = make_dataset(cfg)
    return save_dataset(out_path, obs, meta)


def check_dataset_matches(cfg: ExperimentConfig, meta: dict):
    if meta.get("model") != cfg.data.model:
        raise ConfigurationError(
            f"dataset was generated from {meta.get('model')!r} but config wants {cfg.data.model!r}"
        )
    if not np.isclose(float(meta.get("dt_obs", -1)), cfg.data.dt_obs):
        raise ConfigurationError("dataset observation spacing does not match the config")


def build_filter_config(cfg: ExperimentConfig, obs: ObservationSet, seed: int | None = None) -> FilterConfig:
    filt = cfg.filter
    if filt is None:
        raise ConfigurationError(f"{cfg.name}: no filter section")
    return FilterConfig(
        noise=GaussianNoiseSpec(sigma_c=filt.sigma_c, sigma_d=filt.sigma_d),
        drift=filt.drift,
        solver=filt.solver,
        obs_matrix=obs.obs_matrix,
        n_particles=filt.n_particles,
        seed=filt.seed if seed is None else seed,
        prior_factors=filt.prior_factors,
        restart_history=filt.restart_history,
    )


def drift_labels(cfg: ExperimentConfig, model: BenchmarkModel) -> tuple[str, ...]:
    drift = cfg.filter.drift
    if drift is None or drift.mode != ESTIMATED:
        return ()
    if drift.sharing == SHARED:
        return ("shared",)
    return model.theta_roles


def run_experiment(cfg: ExperimentConfig, obs: ObservationSet, out_dir=None, seed: int | None = None):
    """Run the configured filter on a dataset; optionally write outputs.

    Returns (records, RunSummary). When ``out_dir`` is given, writes
    records.csv and summary.json inside it.
    """
    model = filter_model(cfg)
    fc = build_filter_config(cfg, obs, seed)
    start = time.perf_counter()
    records = run_filter(model, obs, fc)
    wall = time.perf_counter() - start
    summary = compute_run_summary(cfg, model, records, obs, fc.seed, wall)
    if out_dir is not None:
        out_dir = Path(out_dir)
        reporting.write_records_csv(
            out_dir / "records.csv", records, model.theta_roles, drift_labels(cfg, model)
        )
        reporting.write_summary_json(out_dir / "summary.json", summary)
    return records, summary


def _rmse(estimates: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sqrt(np.mean((estimates - truth) ** 2)))


def _coverage(lo: np.ndarray, hi: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean((truth >= lo) & (truth <= hi)))


def compute_run_summary(cfg, model, records, obs, seed, wall_time) -> RunSummary:
    theta_cols = [obs.theta_names.index(role) for role in model.theta_roles]
    state_means = np.stack([r.state_mean for r in records]) if records else np.empty((0, 0))
    theta_means = np.stack([r.theta_mean for r in records]) if records else np.empty((0, 0))
    state_q = np.stack([r.state_q for r in records]) if records else np.empty((0, 0, 4))
    theta_q = np.stack([r.theta_q for r in records]) if records else np.empty((0, 0, 4))
    retentions = [r.retention for r in records]

    rmse_states = {}
    cov68_states = {}
    cov95_states = {}
    for i in range(model.ode.dim_state):
        truth = obs.truth_states[:, i]
        rmse_states[f"x{i + 1}"] = _rmse(state_means[:, i], truth)
        cov68_states[f"x{i + 1}"] = _coverage(state_q[:, i, 1], state_q[:, i, 2], truth)
        cov95_states[f"x{i + 1}"] = _coverage(state_q[:, i, 0], state_q[:, i, 3], truth)

    rmse_theta = {}
    cov68_theta = {}
    cov95_theta = {}
    for j, role in enumerate(model.theta_roles):
        truth = obs.truth_theta[:, theta_cols[j]]
        rmse_theta[role] = _rmse(theta_means[:, j], truth)
        cov68_theta[role] = _coverage(theta_q[:, j, 1], theta_q[:, j, 2], truth)
        cov95_theta[role] = _coverage(theta_q[:, j, 0], theta_q[:, j, 3], truth)

    drift_final = None
    labels = drift_labels(cfg, model)
    if labels and records:
        last = records[-1]
        drift_final = {
            label: {
                "mean": float(last.sigma_mean[i]),
                "lo95": float(last.sigma_q[i, 0]),
                "hi95": float(last.sigma_q[i, 3]),
            }
            for i, label in enumerate(labels)
        }
    sigma_e_fixed = None
    if cfg.filter.drift is not None and cfg.filter.drift.mode == FIXED:
        sigma_e_fixed = cfg.filter.drift.sigma_e

    return RunSummary(
        name=cfg.name,
        kind=cfg.filter.kind,
        seed=seed,
        n_steps=len(records),
        rmse_states=rmse_states,
        rmse_theta=rmse_theta,
        coverage68_states=cov68_states,
        coverage95_states=cov95_states,
        coverage68_theta=cov68_theta,
        coverage95_theta=cov95_theta,
        retention_min=float(min(retentions)) if retentions else float("nan"),
        retention_median=float(median(retentions)) if retentions else float("nan"),
        drift_final=drift_final,
        sigma_e_fixed=sigma_e_fixed,
        degenerate_steps=sum(r.degenerate for r in records),
        wall_time_s=wall_time,
    )


def replicate_experiment(cfg: ExperimentConfig, n_seeds: int, obs: ObservationSet | None = None, out_dir=None):
    """Run with seeds seed+0 .. seed+n_seeds-1 on the config's dataset.

    Returns the list of RunSummary. When ``out_dir`` is given, per-seed
    outputs land in seed<k> subdirectories and a deterministic aggregate
    (no wall times) in replicate_summary.json.
    """
    if n_seeds < 1:
        raise ConfigurationError("n_seeds must be at least 1")
    if obs is None:
        obs, _meta = make_dataset(cfg)
    base = cfg.filter.seed
    summaries = []
    for k in range(n_seeds):
        seed = base + k
        sub = Path(out_dir) / f"seed{seed}" if out_dir is not None else None
        _records, summary = run_experiment(cfg, obs, out_dir=sub, seed=seed)
        summaries.append(summary)
    if out_dir is not None:
        _write_replicate_summary(Path(out_dir) / "replicate_summary.json", cfg, summaries)
    return summaries


def _write_replicate_summary(path, cfg, summaries):
    rows = [reporting.summary_row(_summary_doc(s)) for s in summaries]
    metrics = {}
    for col in reporting.TABLE_COLUMNS[4:]:
        vals = [r[col] for r in rows if isinstance(r[col], (int, float)) and np.isfinite(r[col])]
        if vals:
            metrics[col] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    doc = {
        "schema_version": 1,
        "name": cfg.name,
        "kind": cfg.filter.kind,
        "n_seeds": len(summaries),
        "seeds": [s.seed for s in summaries],
        "metrics": metrics,
        "per_seed": [_strip_wall_time(_summary_doc(s)) for s in summaries],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def _summary_doc(summary: RunSummary) -> dict:
    from dataclasses import asdict

    doc = asdict(summary)
    doc["schema_version"] = 1
    return doc


def _strip_wall_time(doc: dict) -> dict:
    doc = dict(doc)
    doc.pop("wall_time_s", None)
    return doc
