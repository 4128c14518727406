"""Benchmark ODE systems and the time signals that drive them.

Two systems: a forced logistic population model (one state, one additive
forcing input) and a damped forced harmonic oscillator (position/velocity,
multiplicative stiffness and additive forcing). Either oscillator input can
be estimated by a filter or bound to its known signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .odes import OdeModel

SINUSOID = "sinusoid"
MULTISTEP = "multistep"
SINGLESTEP = "singlestep"
LINEAR = "linear"
CONSTANT = "constant"
EXPDECAY = "expdecay"
COS_STIFFNESS = "cosstiffness"

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ThetaTruth:
    """A named time signal: kind plus kind-specific coefficients."""

    kind: str
    coefficients: tuple[float, ...]


def sinusoid(offset=20.0, amplitude=10.0, frequency=0.2) -> ThetaTruth:
    return ThetaTruth(SINUSOID, (offset, amplitude, frequency))


def multistep(amplitude=10.0, offset=20.0, time_scale=10.0) -> ThetaTruth:
    return ThetaTruth(MULTISTEP, (amplitude, offset, time_scale))


def singlestep(low=10.0, high=80.0, t_break=50.0) -> ThetaTruth:
    return ThetaTruth(SINGLESTEP, (low, high, t_break))


def linear(slope=0.5, intercept=10.0) -> ThetaTruth:
    return ThetaTruth(LINEAR, (slope, intercept))


def constant(value: float) -> ThetaTruth:
    return ThetaTruth(CONSTANT, (value,))


def expdecay(amplitude=5.0, rate=0.2, offset=5.0) -> ThetaTruth:
    return ThetaTruth(EXPDECAY, (amplitude, rate, offset))


def cos_stiffness(offset=1.0, amplitude=1.0, frequency=0.5) -> ThetaTruth:
    return ThetaTruth(COS_STIFFNESS, (offset, amplitude, frequency))


def eval_theta(truth: ThetaTruth, t):
    """Evaluate a truth signal at time(s) t >= 0.

    Piecewise kinds are right-continuous at breakpoints; the square wave
    starts on its high segment.
    """
    t = np.asarray(t, dtype=float)
    c = truth.coefficients
    if truth.kind in (SINUSOID, COS_STIFFNESS):
        out = c[0] + c[1] * np.cos(c[2] * t)
    elif truth.kind == MULTISTEP:
        tau = np.mod(t / c[2], _TWO_PI)
        out = c[0] * np.where(tau < math.pi, 1.0, -1.0) + c[1]
    elif truth.kind == SINGLESTEP:
        out = np.where(t < c[2], c[0], c[1])
    elif truth.kind == LINEAR:
        out = c[0] * t + c[1]
    elif truth.kind == CONSTANT:
        out = np.full_like(t, c[0])
    elif truth.kind == EXPDECAY:
        out = c[0] * np.exp(-c[1] * t) + c[2]
    else:
        raise ConfigurationError(f"unknown truth kind {truth.kind!r}")
    return float(out) if out.ndim == 0 else out


def eval_truth_vector(truths, t) -> np.ndarray:
    """Stack several truth signals into the parameter vector at time t."""
    return np.array([eval_theta(tr, t) for tr in truths], dtype=float)


@dataclass(frozen=True)
class BenchmarkModel:
    """An OdeModel plus its constants, estimated slots, and truth signals.

    ``theta_roles`` orders the estimated time-varying slots (the layout of
    the filter's parameter vector); ``truth`` holds one signal per slot.
    Slots not estimated are bound inside the rhs to their own signal,
    evaluated at the requested time.
    """

    name: str
    ode: OdeModel
    constants: dict
    theta_roles: tuple[str, ...]
    truth: tuple[ThetaTruth, ...]
    x0: np.ndarray

    def __post_init__(self):
        if len(self.truth) != self.ode.dim_param:
            raise ConfigurationError("one truth signal required per estimated slot")


def logistic_model(theta_truth: ThetaTruth = None, a=0.01, b=0.001) -> BenchmarkModel:
    """Forced logistic growth: dx/dt = a x - b x^2 + theta(t), x(0) = 10."""
    truth = theta_truth if theta_truth is not None else sinusoid()

    def rhs(t, x, theta):
        return a * x - b * x * x + theta

    def jac(t, x, theta):
        return (a - 2.0 * b * x)[..., None]

    ode = OdeModel(dim_state=1, dim_param=1, rhs=rhs, jac_x=jac)
    return BenchmarkModel(
        name="logistic",
        ode=ode,
        constants={"a": a, "b": b},
        theta_roles=("theta",),
        truth=(truth,),
        x0=np.array([10.0]),
    )


def oscillator_model(
    stiffness: ThetaTruth,
    forcing: ThetaTruth,
    estimate=("k", "q"),
    damping=5.0,
) -> BenchmarkModel:
    """Damped forced oscillator: p' = v, v' = -k(t) p - b v + q(t).

    ``estimate`` selects which of the stiffness ``k`` and forcing ``q``
    inputs the filter treats as unknown; the rest stay bound to their
    signals. p(0) = 0, v(0) = 1, mass fixed at 1.
    """
    estimate = tuple(s for s in ("k", "q") if s in estimate)
    if not estimate or any(s not in ("k", "q") for s in estimate):
        raise ConfigurationError("oscillator estimate slots must be among {'k', 'q'}")
    truths = {"k": stiffness, "q": forcing}
    slot = {name: i for i, name in enumerate(estimate)}

    def pull(name, t, theta):
        if name in slot:
            return theta[..., slot[name]]
        return eval_theta(truths[name], t)

    def rhs(t, x, theta):
        p = x[..., 0]
        v = x[..., 1]
        k = pull("k", t, theta)
        q = pull("q", t, theta)
        return np.stack([v, -k * p - damping * v + q], axis=-1)

    def jac(t, x, theta):
        k = pull("k", t, theta)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -k
        out[..., 1, 1] = -damping
        return out

    ode = OdeModel(dim_state=2, dim_param=len(estimate), rhs=rhs, jac_x=jac)
    return BenchmarkModel(
        name="oscillator",
        ode=ode,
        constants={"b": damping, "m": 1.0},
        theta_roles=estimate,
        truth=tuple(truths[s] for s in estimate),
        x0=np.array([0.0, 1.0]),
    )


_LOGISTIC_TRUTHS = {
    "sinusoid": sinusoid,
    "multistep": multistep,
    "singlestep": singlestep,
    "linear": linear,
}

_OSCILLATOR_VARIANTS = {
    "const-stiffness": lambda: (constant(2.0), expdecay()),
    "cos-stiffness": lambda: (cos_stiffness(), expdecay()),
}


def resolve_model(model_id: str, estimate=None) -> BenchmarkModel:
    """Build a benchmark model from a string id like ``logistic/sinusoid``.

    For oscillator ids (``oscillator/const-stiffness``,
    ``oscillator/cos-stiffness``) the optional ``estimate`` selects the
    slots treated as unknown; the default estimates both, which is also
    the configuration used when generating synthetic data.
    """
    family, _, variant = model_id.partition("/")
    if family == "logistic":
        maker = _LOGISTIC_TRUTHS.get(variant)
        if maker is None:
            raise ConfigurationError(f"unknown logistic truth {variant!r}")
        if estimate not in (None, ("theta",), ["theta"]):
            raise ConfigurationError("logistic models estimate the single slot 'theta'")
        return logistic_model(maker())
    if family == "oscillator":
        maker = _OSCILLATOR_VARIANTS.get(variant)
        if maker is None:
            raise ConfigurationError(f"unknown oscillator variant {variant!r}")
        stiffness, forcing = maker()
        est = ("k", "q") if estimate is None else tuple(estimate)
        return oscillator_model(stiffness, forcing, estimate=est)
    raise ConfigurationError(f"unknown model id {model_id!r}")


def parse_estimate(value) -> tuple[str, ...]:
    """Normalize an estimate selection: 'k', 'q', 'k-and-q', or a list."""
    if value is None:
        return None
    if isinstance(value, str):
        if value == "k-and-q":
            return ("k", "q")
        return (value,)
    return tuple(value)
