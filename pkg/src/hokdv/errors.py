"""Exception hierarchy shared by the toolkit."""


class HokdvError(Exception):
    """Base class for all toolkit errors."""


class RangeError(HokdvError, OverflowError):
    """An exact integer quantity exceeded the supported width."""


class AliasingError(HokdvError, ValueError):
    """A collocation grid is too coarse for the requested truncation."""


class ResolutionError(HokdvError, ValueError):
    """A sampling grid cannot resolve the quantity being measured."""


class DegenerateProfileError(HokdvError, ValueError):
    """A control profile produces a vanishing controllability weight."""


class IllPosedHorizonError(HokdvError, ValueError):
    """The exponential family is too ill-conditioned on the chosen horizon."""


class PartialControllabilityError(HokdvError, ValueError):
    """Some target modes cannot be reached by the available controls."""

    def __init__(self, message, modes=()):
        super().__init__(message)
        self.modes = tuple(modes)


class AccuracyError(HokdvError, RuntimeError):
    """A quadrature or self-check failed to reach the requested accuracy."""


class BlowUpError(HokdvError, FloatingPointError):
    """A time integration produced non-finite values."""

    def __init__(self, message, last_state=None, time=None):
        super().__init__(message)
        self.last_state = last_state
        self.time = time


class ConfigError(HokdvError, ValueError):
    """An experiment configuration failed to parse or validate."""
