"""Synthetic truth and observation generation.

Truth trajectories come from fine-step RK4 integration with the true
time-varying inputs evaluated at every stage time; observations are the
truth on a uniform grid plus Gaussian noise whose std is a fraction of
each observed component's std over the recorded window.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .models import BenchmarkModel, eval_theta, eval_truth_vector
from .odes import solve_fixed_rk4
from .rng import RngStream

TRUTH_STEP = 1e-3
DATASET_HEADER = "# tvpfilter-dataset v1"


@dataclass(frozen=True)
class ObservationSet:
    """Noisy observations on a uniform grid, with the truth kept for scoring.

    The first observation falls strictly after t = 0, exactly one spacing in.
    ``truth_theta`` holds every time-varying input of the generating model
    (columns named by ``theta_names``), not just the slots a filter estimates.
    """

    times: np.ndarray        # (T,)
    values: np.ndarray       # (T, m)
    obs_matrix: np.ndarray   # (m, d)
    truth_states: np.ndarray # (T, d)
    truth_theta: np.ndarray  # (T, P)
    theta_names: tuple[str, ...]

    def __post_init__(self):
        t = self.times
        if t.size == 0:
            return
        dt = t[0]
        if not dt > 0:
            raise ConfigurationError("first observation must fall strictly after t=0")
        grid = np.arange(1, t.size + 1) * dt
        if not np.allclose(t, grid, rtol=1e-9, atol=1e-12):
            raise ConfigurationError("observation times must be uniformly spaced from dt")

    @property
    def spacing(self) -> float:
        return float(self.times[0])


def generate_truth(model: BenchmarkModel, t_end: float, dt_record: float, h_truth: float = TRUTH_STEP):
    """Integrate the true system and record it on the ``dt_record`` grid.

    Returns (times, states, thetas) including the t = 0 row; ``thetas`` are
    the model's truth signals evaluated at the recorded times.
    """
    if not dt_record > 0:
        raise ConfigurationError("dt_record must be positive")
    n_steps = int(round(t_end / h_truth))
    stride = int(round(dt_record / h_truth))
    if stride < 1 or not np.isclose(stride * h_truth, dt_record, rtol=1e-9):
        raise ConfigurationError("dt_record must be a multiple of the truth step")
    if not np.isclose(n_steps * h_truth, t_end, rtol=1e-9):
        raise ConfigurationError("t_end must be a multiple of the truth step")

    theta_of_t = lambda t: eval_truth_vector(model.truth, t)
    fine = solve_fixed_rk4(model.ode, 0.0, model.x0, theta_of_t, h_truth, n_steps)
    times = np.arange(0, n_steps + 1, stride) * h_truth
    states = fine[::stride].copy()
    thetas = np.stack([eval_theta(tr, times) for tr in model.truth], axis=1)
    return times, states, thetas


def corrupt(times, states, thetas, noise_fraction: float, obs_matrix, rng, theta_names):
    """Add state-proportional Gaussian noise to the truth on the obs grid.

    Per observed component the noise std is ``noise_fraction`` times the
    population std of that component over the supplied window; a constant
    component gets zero noise and a warning.
    """
    if noise_fraction < 0:
        raise ConfigurationError("noise_fraction must be nonnegative")
    states = np.asarray(states, dtype=float)
    obs_matrix = np.asarray(obs_matrix, dtype=float)
    clean = states @ obs_matrix.T
    stds = np.empty(obs_matrix.shape[0])
    for i, row in enumerate(obs_matrix):
        comp = int(np.argmax(row))
        s = noise_fraction * float(states[:, comp].std())
        if noise_fraction > 0 and s == 0.0:
            warnings.warn(f"observed component {comp} has zero variance; noise std set to 0")
        stds[i] = s
    noise = stds * rng.standard_normal(clean.shape)
    return (
        ObservationSet(
            times=np.asarray(times, dtype=float),
            values=clean + noise,
            obs_matrix=obs_matrix,
            truth_states=states,
            truth_theta=np.asarray(thetas, dtype=float),
            theta_names=tuple(theta_names),
        ),
        stds,
    )


def build_dataset(model: BenchmarkModel, t_end: float, dt_obs: float, noise_fraction: float, seed: int):
    """Generate truth, drop the t = 0 row, and corrupt the observation grid."""
    times, states, thetas = generate_truth(model, t_end, dt_obs)
    gen = RngStream(seed).data_stream()
    obs, stds = corrupt(
        times[1:],
        states[1:],
        thetas[1:],
        noise_fraction,
        np.eye(model.ode.dim_state),
        gen,
        model.theta_roles,
    )
    return obs, stds


def save_dataset(path, obs: ObservationSet, meta: dict) -> Path:
    """Write the dataset CSV plus its JSON sidecar; returns the CSV path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = obs.values.shape[1]
    d = obs.truth_states.shape[1]
    header = (
        ["t"]
        + [f"y_{i + 1}" for i in range(m)]
        + [f"truth_x_{i + 1}" for i in range(d)]
        + [f"truth_theta_{i + 1}" for i in range(obs.truth_theta.shape[1])]
    )
    with path.open("w", newline="") as fh:
        fh.write(DATASET_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(obs.times.size):
            row = [obs.times[i], *obs.values[i], *obs.truth_states[i], *obs.truth_theta[i]]
            writer.writerow([repr(float(v)) for v in row])
    sidecar = dict(meta)
    sidecar["schema_version"] = 1
    sidecar["theta_names"] = list(obs.theta_names)
    sidecar["obs_matrix"] = obs.obs_matrix.tolist()
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_dataset(path):
    """Read a dataset CSV and its sidecar back into an ObservationSet."""
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    if not path.exists() or not sidecar_path.exists():
        raise ConfigurationError(f"dataset {path} or its sidecar is missing")
    meta = json.loads(sidecar_path.read_text())
    with path.open() as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, data = rows[0], np.array(rows[1:], dtype=float)
    m = sum(1 for c in header if c.startswith("y_"))
    d = sum(1 for c in header if c.startswith("truth_x_"))
    obs = ObservationSet(
        times=data[:, 0],
        values=data[:, 1 : 1 + m],
        obs_matrix=np.asarray(meta["obs_matrix"], dtype=float),
        truth_states=data[:, 1 + m : 1 + m + d],
        truth_theta=data[:, 1 + m + d :],
        theta_names=tuple(meta["theta_names"]),
    )
    return obs, meta
