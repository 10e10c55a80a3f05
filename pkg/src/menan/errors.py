"""Exception types shared across the package."""


class MenanError(Exception):
    """Base class for package errors."""


class ShapeError(MenanError, ValueError):
    """Operand shapes do not conform to an operation's contract."""


class NumericError(MenanError, ArithmeticError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""


class DataError(MenanError, ValueError):
    """Bad manifest, label, waveform length, or parameter value."""


class ConfigError(MenanError, ValueError):
    """Invalid or inconsistent run configuration."""


class MetricError(MenanError, ValueError):
    """Metric preconditions violated (empty input, missing class, ...)."""
