"""Exception types shared across the package."""


class Seq2GMMError(Exception):
    """Base class for all package errors."""


class ParseError(Seq2GMMError, ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ConfigError(Seq2GMMError, ValueError):
    pass


class NumericalError(Seq2GMMError, ArithmeticError):
    pass


class MetricError(Seq2GMMError, ValueError):
    pass
