"""Shared exception types.

Everything raised on purpose by this package derives from DriftmatchError so
callers can catch one base class. Value-like misuse (bad time, bad config)
also derives from ValueError, runtime blowups from RuntimeError.
"""


class DriftmatchError(Exception):
    """Base class for all errors raised by driftmatch."""


class DomainError(DriftmatchError, ValueError):
    """An argument is outside its documented domain (e.g. t not in [0, T])."""


class SingularTimeError(DomainError):
    """A score/drift was requested at (or within 1e-9 of) a singular endpoint."""


class ConfigError(DriftmatchError, ValueError):
    """A configuration file or config object is invalid."""


class UnsupportedCouplingError(ConfigError):
    """The requested coupling cannot be formed from the given ingredients
    (e.g. an independent coupling with a Dirac prior, whose score does not
    exist)."""


class PoisonedStateError(DriftmatchError, RuntimeError):
    """Network parameters contain NaN/Inf; the model state is unusable."""


class DivergenceError(DriftmatchError, RuntimeError):
    """Simulation or training produced non-finite values.

    Attributes carry context: ``step_index`` for simulations, ``last_loss``
    for training (the last finite loss seen before the blowup).
    """

    def __init__(self, message, step_index=None, last_loss=None):
        super().__init__(message)
        self.step_index = step_index
        self.last_loss = last_loss


class DataQualityError(DriftmatchError, RuntimeError):
    """Too many regression targets in one batch were non-finite (>10%)."""


class DegenerateWeightsError(DriftmatchError, ValueError):
    """All importance weights are zero (log-weights all -inf)."""


class DegenerateVariateError(DriftmatchError, ValueError):
    """The control-variate estimator has zero variance; c* is undefined."""
