"""Exception types shared across the package."""


class ArcFlowError(Exception):
    pass


class ParseError(ArcFlowError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        self.message = message
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ValidationError(ArcFlowError, ValueError):
    pass


class BudgetExceeded(ArcFlowError, RuntimeError):
    """Raised when a state, path or iteration budget runs out."""

    def __init__(self, message, used=None):
        self.used = used
        super().__init__(message)


class ConsistencyError(ArcFlowError, RuntimeError):
    pass


class SolverError(ArcFlowError, RuntimeError):
    def __init__(self, message, output=""):
        self.output = output
        super().__init__(message)
