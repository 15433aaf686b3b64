"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class StabilityError(ValueError):
    """The integration grid cannot resolve the circuit's fastest dynamics."""


class FitError(RuntimeError):
    """A mixture fit degenerated."""


class ThresholdError(RuntimeError):
    """A pulse failed to cross the timing threshold too often."""


class ConfigError(ValueError):
    """A run configuration could not be parsed or validated."""


class StageError(RuntimeError):
    """A pipeline stage failed or its prerequisite output is missing."""
