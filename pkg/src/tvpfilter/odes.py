"""Fixed-step integration of parameterized ODE systems.

Explicit RK4 drives synthetic truth generation; implicit BDF1/BDF2 with
damped Newton iteration propagates filter particles. The BDF formulas need
a trailing window of past states, handled here as an explicit history so
callers can reshuffle, overwrite, or restart it between steps.

Every operation is pure and works on either a single state vector or a
batch of N stacked particle states: ``rhs(t, x, theta)`` must broadcast
over leading axes, which keeps the single-particle and all-particles code
paths bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, IntegrationError

RK4 = "rk4"
BDF1 = "bdf1"
BDF2 = "bdf2"

_TIME_RTOL = 1e-9
_FD_EPS = 1e-6
_MAX_HALVINGS = 5


@dataclass(frozen=True)
class OdeModel:
    """Right-hand side dx/dt = f(t, x, theta) with optional state Jacobian.

    ``rhs`` takes ``x`` of shape (d,) or (N, d) and ``theta`` of shape (p,)
    or (N, p) and returns the matching shape. ``jac_x``, when provided,
    returns df/dx of shape (d, d) or (N, d, d); otherwise a central
    finite-difference Jacobian is substituted during Newton iteration.
    """

    dim_state: int
    dim_param: int
    rhs: Callable[..., np.ndarray]
    jac_x: Optional[Callable[..., np.ndarray]] = None


@dataclass(frozen=True)
class SolverSpec:
    """Time-marching method, step size, and Newton controls."""

    method: str = BDF2
    step: float = 0.25
    newton_tol: float = 1e-10
    newton_max_iter: int = 25

    def __post_init__(self):
        if self.method not in (RK4, BDF1, BDF2):
            raise ConfigurationError(f"unknown solver method {self.method!r}")
        if not self.step > 0:
            raise ConfigurationError("solver step must be positive")
        if not self.newton_tol > 0 or self.newton_max_iter < 1:
            raise ConfigurationError("invalid Newton settings")


@dataclass
class MultistepHistory:
    """Trailing (t, x) pairs for one particle, most recent last, capacity two.

    Entry times are strictly increasing and spaced exactly one solver step
    apart; length is 1 right after (re)initialization and 2 once a step has
    been taken.
    """

    times: np.ndarray
    states: np.ndarray

    @classmethod
    def fresh(cls, t0: float, x0) -> "MultistepHistory":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return cls(times=np.array([t0], dtype=float), states=x0[None, :].copy())

    @property
    def length(self) -> int:
        return len(self.times)

    @property
    def last_time(self) -> float:
        return float(self.times[-1])

    @property
    def last_state(self) -> np.ndarray:
        return self.states[-1]

    def advanced(self, t: float, x: np.ndarray) -> "MultistepHistory":
        """New history with (t, x) appended, keeping the last two entries."""
        times = np.append(self.times, t)[-2:]
        states = np.vstack([self.states, x[None, :]])[-2:]
        return MultistepHistory(times=times, states=states)


def rk4_step(model: OdeModel, t: float, x, theta, h: float):
    """One classical four-stage Runge-Kutta update of size ``h``."""
    if not h > 0:
        raise ConfigurationError("rk4 step size must be positive")
    x = np.asarray(x, dtype=float)
    k1 = model.rhs(t, x, theta)
    k2 = model.rhs(t + 0.5 * h, x + 0.5 * h * k1, theta)
    k3 = model.rhs(t + 0.5 * h, x + 0.5 * h * k2, theta)
    k4 = model.rhs(t + h, x + h * k3, theta)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite dynamics in RK4 step at t={t}", t=t)
    return out


def finite_difference_jacobian(model: OdeModel, t: float, x, theta) -> np.ndarray:
    """Central-difference df/dx with per-column perturbation max(1e-6, 1e-6|x_i|)."""
    x = np.asarray(x, dtype=float)
    return _fd_jacobian(model, t, x, theta)


def _fd_jacobian(model: OdeModel, t, x, theta) -> np.ndarray:
    d = x.shape[-1]
    cols = []
    for i in range(d):
        eps = np.maximum(_FD_EPS, _FD_EPS * np.abs(x[..., i]))
        xp = x.copy()
        xm = x.copy()
        xp[..., i] = xp[..., i] + eps
        xm[..., i] = xm[..., i] - eps
        df = (model.rhs(t, xp, theta) - model.rhs(t, xm, theta)) / (2.0 * eps[..., None])
        cols.append(df)
    return np.stack(cols, axis=-1)


def _jacobian(model: OdeModel, t, x, theta) -> np.ndarray:
    if model.jac_x is not None:
        return np.asarray(model.jac_x(t, x, theta), dtype=float)
    return _fd_jacobian(model, t, x, theta)


def _bdf_target(method: str, hist_states: np.ndarray):
    """Constant part and f-coefficient of the implicit relation.

    BDF1: x = x_n + h f;  BDF2: x = (4/3) x_n - (1/3) x_{n-1} + (2/3) h f.
    ``hist_states`` has shape (N, L, d) with the most recent state last.
    """
    if method == BDF1:
        return hist_states[:, -1, :].copy(), 1.0
    if hist_states.shape[1] < 2:
        raise ValueError("BDF2 requires two history entries; bootstrap with BDF1")
    const = (4.0 / 3.0) * hist_states[:, -1, :] - (1.0 / 3.0) * hist_states[:, -2, :]
    return const, 2.0 / 3.0


def _newton_solve(model, t_next, const, beta_h, x_init, thetas, spec):
    """Damped Newton on R(x) = x - const - beta*h*f(t_next, x, theta), batched.

    Converged particles are frozen; active ones take a full Newton step,
    halved up to five times while the residual infinity-norm increases.
    """
    d = x_init.shape[-1]
    eye = np.eye(d)

    def residual(xv):
        f = model.rhs(t_next, xv, thetas)
        if not np.all(np.isfinite(f)):
            raise IntegrationError(
                f"non-finite dynamics at t={t_next}", t=t_next
            )
        return xv - const - beta_h * f

    x = x_init.copy()
    r = residual(x)
    rnorm = np.max(np.abs(r), axis=-1)
    for _ in range(spec.newton_max_iter):
        active = rnorm > spec.newton_tol
        if not active.any():
            return x
        jac = _jacobian(model, t_next, x, thetas)
        try:
            delta = np.linalg.solve(eye - beta_h * jac, r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise IntegrationError(
                f"singular Newton matrix at t={t_next}", t=t_next
            ) from exc
        lam = 1.0
        need = active.copy()
        for attempt in range(_MAX_HALVINGS + 1):
            x_try = x - lam * delta
            r_try = residual(x_try)
            rn_try = np.max(np.abs(r_try), axis=-1)
            take = need & ((rn_try <= rnorm) | (attempt == _MAX_HALVINGS))
            x[take] = x_try[take]
            r[take] = r_try[take]
            rnorm[take] = rn_try[take]
            need &= ~take
            if not need.any():
                break
            lam *= 0.5
    bad = rnorm > spec.newton_tol
    if bad.any():
        worst = int(np.argmax(rnorm))
        raise IntegrationError(
            f"Newton failed to converge at t={t_next} "
            f"(residual {rnorm[worst]:.3e}, particle {worst})",
            t=t_next,
            residual=float(rnorm[worst]),
            particle=worst,
        )
    return x


def bdf_step(model: OdeModel, history: MultistepHistory, theta, spec: SolverSpec) -> np.ndarray:
    """Solve one implicit BDF1/BDF2 step from the history's last entry.

    The nonlinear relation is solved by damped Newton iteration starting
    from the last history state; convergence requires the residual
    infinity-norm to fall to ``spec.newton_tol`` or below.
    """
    if spec.method not in (BDF1, BDF2):
        raise ConfigurationError(f"bdf_step cannot run method {spec.method!r}")
    if history.length == 0:
        raise ValueError("history must be non-empty")
    theta = np.asarray(theta, dtype=float)
    hist = history.states[None, :, :]
    const, beta = _bdf_target(spec.method, hist)
    t_next = history.last_time + spec.step
    x = _newton_solve(
        model, t_next, const, beta * spec.step, hist[:, -1, :], theta[None, :], spec
    )
    return x[0]


def propagate_interval(
    model: OdeModel,
    history: MultistepHistory,
    theta,
    spec: SolverSpec,
    t_start: float,
    t_end: float,
):
    """Advance one particle from ``t_start`` to ``t_end`` in exact substeps.

    ``theta`` is held fixed across the interval. The interval length must
    be a positive integer multiple of the solver step; the first substep of
    a single-entry history is bootstrapped with BDF1 when BDF2 is selected.

    Returns (final state, updated two-entry history, list of all substep
    states). The intermediates let callers rebuild histories after an
    innovation overwrites the endpoint.
    """
    theta = np.asarray(theta, dtype=float)
    hist_states = history.states[None, :, :]
    x_end, times, states, inter = _propagate(
        model, history.times, hist_states, theta[None, :], spec, t_start, t_end
    )
    updated = MultistepHistory(times=times, states=states[0])
    return x_end[0], updated, [step[0] for step in inter]


def propagate_ensemble(
    model: OdeModel,
    hist_times: np.ndarray,
    hist_states: np.ndarray,
    thetas: np.ndarray,
    spec: SolverSpec,
    t_start: float,
    t_end: float,
):
    """All-particles version of :func:`propagate_interval`.

    ``hist_states`` has shape (N, L, d) and ``thetas`` (N, p); every
    particle shares the history time stamps. Returns
    (final states (N, d), history times, history states (N, 2, d),
    intermediates list of (N, d) arrays).
    """
    return _propagate(model, hist_times, hist_states, thetas, spec, t_start, t_end)


def _propagate(model, hist_times, hist_states, thetas, spec, t_start, t_end):
    if not np.isclose(hist_times[-1], t_start, rtol=0.0, atol=_TIME_RTOL * max(1.0, abs(t_start))):
        raise ConfigurationError(
            f"history ends at t={hist_times[-1]}, interval starts at t={t_start}"
        )
    span = t_end - t_start
    n_sub = int(round(span / spec.step))
    if n_sub < 1 or not np.isclose(n_sub * spec.step, span, rtol=_TIME_RTOL, atol=0.0):
        raise ConfigurationError(
            f"interval [{t_start}, {t_end}] is not a positive multiple of step {spec.step}"
        )

    times = np.asarray(hist_times, dtype=float).copy()
    states = np.asarray(hist_states, dtype=float).copy()
    intermediates = []
    for i in range(n_sub):
        t_next = t_start + (i + 1) * spec.step
        method = spec.method
        if method == BDF2 and states.shape[1] < 2:
            method = BDF1
        const, beta = _bdf_target(method, states)
        try:
            x_next = _newton_solve(
                model, t_next, const, beta * spec.step, states[:, -1, :], thetas, spec
            )
        except IntegrationError as exc:
            exc.args = (f"substep {i}: {exc.args[0]}",)
            raise
        intermediates.append(x_next)
        times = np.append(times, t_next)[-2:]
        states = np.concatenate([states, x_next[:, None, :]], axis=1)[:, -2:, :]
    return states[:, -1, :].copy(), times, states, intermediates


def solve_fixed_rk4(model: OdeModel, t0: float, x0, theta_of_t, h: float, n_steps: int):
    """March RK4 ``n_steps`` times, evaluating ``theta_of_t`` at stage times.

    Used by the truth generator; returns the full trajectory including the
    initial state, shape (n_steps + 1, d).
    """
    wrapper = replace(
        model, dim_param=0, rhs=lambda t, x, _th: model.rhs(t, x, theta_of_t(t)), jac_x=None
    )
    empty = np.empty(0)
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    out = np.empty((n_steps + 1, x.shape[-1]))
    out[0] = x
    for i in range(n_steps):
        x = rk4_step(wrapper, t0 + i * h, x, empty, h)
        out[i + 1] = x
    return out
