"""Exception types shared across the package."""


class TvpFilterError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TvpFilterError):
    """Invalid configuration: bad ranges, misaligned grids, schema mismatches."""


class IntegrationError(TvpFilterError):
    """ODE propagation failed (non-finite dynamics or Newton non-convergence)."""

    def __init__(self, message, t=None, residual=None, particle=None, step=None):
        super().__init__(message)
        self.t = t
        self.residual = residual
        self.particle = particle
        self.step = step


class DegenerateWeightsError(TvpFilterError):
    """Every particle weight is zero; the caller decides the fallback."""


class CovarianceError(TvpFilterError):
    """Covariance factorization failed even after diagonal jitter."""
