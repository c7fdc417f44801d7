"""Exception types shared across the package."""


class RQError(Exception):
    """Base class for all errors raised by rqmoe."""


class ShapeError(RQError, ValueError):
    """Operand shapes are incompatible."""


class EmptyTraceError(RQError, ValueError):
    """A routing statistic was requested over zero observed tokens."""


class StateError(RQError, RuntimeError):
    """An operation was applied to an object in the wrong state."""


class InsufficientStreamError(RQError, ValueError):
    """Too few tokens survived filtering to fill every timestep."""


class DataFormatError(RQError, ValueError):
    """An input file could not be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")
