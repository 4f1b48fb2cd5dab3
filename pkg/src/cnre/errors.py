"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class NumericError(FloatingPointError):
    """A computation produced a non-finite value."""


class StateError(RuntimeError):
    """An operation was called in the wrong lifecycle state."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class UnsupportedError(NotImplementedError):
    """The requested capability is not available for this object."""


class DiagnosticError(RuntimeError):
    """A diagnostic could not be computed from the given inputs."""


class SamplingError(RuntimeError):
    """A sampler failed to produce draws."""
