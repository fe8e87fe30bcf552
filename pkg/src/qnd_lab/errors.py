"""Exception hierarchy shared by the engines and the command line."""


class QndError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(QndError, ValueError):
    pass


class SingularPreparationError(QndError, ValueError):
    """Probe preparation too close to perfect correlation (|r| -> 1)."""


class GridResolutionError(QndError, ValueError):
    """A grid is too narrow or too coarse for the requested state."""


class CalibrationError(QndError, RuntimeError):
    """Calibration produced an estimate outside its statistical tolerance."""


class UndefinedConditionalError(QndError, ValueError):
    """Conditional state requested for an outcome of zero probability."""


class DimensionMismatchError(QndError, ValueError):
    pass


class NotUnitaryError(QndError, ValueError):
    pass


class ConfigError(InvalidArgumentError):
    """Malformed or inconsistent configuration file."""

    def __init__(self, message: str, key: str = "", line: int = 0):
        where = []
        if key:
            where.append(f"key {key!r}")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line
