"""Exception hierarchy shared across the package."""


class AdvRateError(Exception):
    """Base class for every error raised by advrate."""


class ShapeError(AdvRateError, ValueError):
    """Input or parameter dimensions do not line up."""


class NumericError(AdvRateError, ArithmeticError):
    """A computation produced a non-finite value."""


class ContractError(AdvRateError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(AdvRateError, ValueError):
    """A configuration object is invalid or cannot be realized."""


class ParseError(AdvRateError, ValueError):
    """A file could not be parsed into the expected structure."""

    def __init__(self, message, source=None, location=None):
        self.source = source
        self.location = location
        where = ""
        if source is not None:
            where += f"{source}"
        if location is not None:
            where += f" at {location}"
        super().__init__(f"{where}: {message}" if where else message)
