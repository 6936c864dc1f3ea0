"""Exception types shared across the solver."""


class DfbdpError(Exception):
    """Base class for all solver errors."""


class InvalidArgument(DfbdpError, ValueError):
    pass


class NumericFailure(DfbdpError, FloatingPointError):
    """A computation produced a non-finite value.

    ``context`` carries whatever locates the failure (time index, sample,
    iteration, parameter block, loss trace).
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class UnsupportedProblem(DfbdpError):
    """The requested measure needs exact solution fields the problem lacks."""


class ConfigError(DfbdpError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
