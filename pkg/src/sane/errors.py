"""Exception types raised across the package."""


class SaneError(Exception):
    """Base class for all package errors."""


class ShapeError(SaneError, ValueError):
    """Input or parameter dimensions do not match the network spec."""


class FrozenNetworkError(SaneError, RuntimeError):
    """A mutation or gradient request was made on a frozen network."""


class NumericError(SaneError, ArithmeticError):
    """A gradient or loss contained NaN/Inf; the step was aborted."""


class InvalidTrajectoryError(SaneError, ValueError):
    pass


class EmptyBufferError(SaneError, LookupError):
    pass


class DegenerateBehaviorError(SaneError, ValueError):
    """A behavior-policy probability of zero makes importance weights undefined."""


class EpisodeFinishedError(SaneError, RuntimeError):
    pass


class NormalizationError(SaneError, ArithmeticError):
    """Forgetting normalization by a zero maximum return is undefined."""


class UnknownModuleError(SaneError, KeyError):
    pass


class ConfigError(SaneError, ValueError):
    """Invalid run configuration. ``field`` holds the dotted path of the offending key."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class FormatError(SaneError, ValueError):
    """Malformed checkpoint blob."""
