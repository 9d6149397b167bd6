"""Exception types raised by the fitters, the scan, and the command line."""


class TwoStageError(Exception):
    """Base class for all package errors."""


class InvalidInput(TwoStageError, ValueError):
    pass


class InvalidResponse(InvalidInput):
    pass


class InvalidRange(InvalidInput):
    pass


class SingularDesign(TwoStageError, ArithmeticError):
    """X'X or the Fisher information is not invertible at working precision."""


class SingularInformation(SingularDesign):
    """The partial-likelihood information is not invertible."""


class NoInformation(SingularInformation):
    """A covariate carries no information (zero variance)."""


class NoEvents(InvalidInput):
    pass


class DegenerateVariance(TwoStageError, ArithmeticError):
    pass


class ConfigError(TwoStageError, ValueError):
    pass


class ParseError(InvalidInput):
    def __init__(self, message, path=None, line=None, column=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.column = column


class AlignmentError(InvalidInput):
    pass
