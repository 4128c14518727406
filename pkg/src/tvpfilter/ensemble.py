"""Particle containers and the statistical kernel.

Gaussian observation log-likelihoods, multinomial resampling with
retention accounting, weighted posterior summaries (mean, covariance,
quantiles), and covariance-factored Gaussian draws. Weights live in the
probability domain but are always produced from log-domain arithmetic
with max-subtraction, so likelihood ratios cannot underflow silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, CovarianceError, DegenerateWeightsError

_JITTER = 1e-12
LOG_RATIO_CLAMP = 700.0

# Credible-band probabilities: 95% and 68% interval edges, ascending.
BAND_QS = (0.025, 0.16, 0.84, 0.975)


@dataclass(frozen=True)
class GaussianNoiseSpec:
    """Isotropic noise levels: state innovation std and observation std."""

    sigma_c: float
    sigma_d: float

    def __post_init__(self):
        if self.sigma_c < 0:
            raise ConfigurationError("sigma_c must be nonnegative")
        if not self.sigma_d > 0:
            raise ConfigurationError("sigma_d must be positive")


@dataclass
class Ensemble:
    """Weighted particle sample of states, parameters, and drift constants.

    ``drift_logits`` holds the transformed drift-constant particles
    ((N, 0) when the drift is fixed or absent). Histories are stored
    stacked because every particle shares the same time stamps.
    """

    t: float
    states: np.ndarray        # (N, d)
    params: np.ndarray        # (N, p)
    drift_logits: np.ndarray  # (N, q), q in {0, 1, p}
    weights: np.ndarray       # (N,), nonnegative, summing to one
    hist_times: np.ndarray    # (L,), L in {1, 2}
    hist_states: np.ndarray   # (N, L, d)

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def dim_state(self) -> int:
        return self.states.shape[1]

    @property
    def dim_param(self) -> int:
        return self.params.shape[1]

    @property
    def dim_drift(self) -> int:
        return self.drift_logits.shape[1]


def log_likelihood(y, x, obs_matrix, sigma_d: float):
    """Log density of y under N(G x, sigma_d^2 I).

    ``x`` may be one state (d,) or a batch (N, d); returns a float or (N,).
    """
    if not sigma_d > 0:
        raise ConfigurationError("sigma_d must be positive")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    pred = x @ np.asarray(obs_matrix, dtype=float).T
    resid2 = np.sum((y - pred) ** 2, axis=-1)
    m = y.shape[-1]
    out = -0.5 * m * np.log(2.0 * np.pi * sigma_d**2) - resid2 / (2.0 * sigma_d**2)
    return float(out) if out.ndim == 0 else out


def normalize_log_weights(log_w: np.ndarray):
    """Exponentiate after max-subtraction and normalize to sum one.

    Returns None when every entry is -inf (total underflow); the caller
    chooses the fallback.
    """
    log_w = np.asarray(log_w, dtype=float)
    peak = np.max(log_w)
    if not np.isfinite(peak):
        return None
    w = np.exp(np.clip(log_w - peak, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    return w / np.sum(w)


def resample_auxiliary(fitness: np.ndarray, rng: np.random.Generator):
    """Draw N multinomial indices proportional to ``fitness``.

    Returns (indices, retention) where retention is the fraction of
    distinct indices drawn.
    """
    fitness = np.asarray(fitness, dtype=float)
    if np.any(fitness < 0):
        raise ConfigurationError("fitness must be nonnegative")
    total = fitness.sum()
    if not total > 0:
        raise DegenerateWeightsError("all fitness weights are zero")
    n = fitness.shape[0]
    cdf = np.cumsum(fitness / total)
    draws = rng.random(n)
    indices = np.minimum(np.searchsorted(cdf, draws, side="right"), n - 1)
    retention = np.unique(indices).size / n
    return indices, retention


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted average along the particle axis."""
    return np.asarray(weights, dtype=float) @ np.asarray(values, dtype=float)


def weighted_covariance(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted covariance (symmetrized); jitter is applied only when a
    downstream factorization needs it, never stored here."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    weights = np.asarray(weights, dtype=float)
    center = weights @ values
    dev = values - center
    cov = (weights[:, None] * dev).T @ dev
    return 0.5 * (cov + cov.T)


def weighted_std(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Componentwise weighted standard deviation."""
    values = np.asarray(values, dtype=float)
    center = weighted_mean(values, weights)
    var = weighted_mean((values - center) ** 2, weights)
    return np.sqrt(np.maximum(var, 0.0))


def weighted_quantile(values: np.ndarray, weights: np.ndarray, qs) -> np.ndarray:
    """Weighted quantiles via the midpoint inverse-CDF rule.

    Values are sorted, zero-weight entries dropped, and each survivor is
    placed at its cumulative weight minus half its own weight; quantiles
    are linearly interpolated between those positions and clamped at the
    extremes.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    keep = w > 0
    v = v[keep]
    w = w[keep]
    if v.size == 0:
        raise ConfigurationError("weighted_quantile needs at least one positive weight")
    total = w.sum()
    cum = np.cumsum(w)
    pos = (cum - 0.5 * w) / total
    return np.interp(np.asarray(qs, dtype=float), pos, v)


def quantile_bands(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Credible-band edges (lo95, lo68, hi68, hi95) for one component."""
    return weighted_quantile(values, weights, BAND_QS)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + _JITTER * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("covariance not factorizable even with jitter") from exc


def gaussian_draws(rng: np.random.Generator, n: int, mean, cov) -> np.ndarray:
    """Draw n samples from N(mean, cov) via a lower-triangular factor.

    An exactly zero covariance short-circuits to the mean; otherwise a
    failed Cholesky gets one diagonal-jitter retry before raising.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    factor = _psd_factor(cov)
    z = rng.standard_normal((n, mean.shape[0]))
    return mean + z @ factor.T
