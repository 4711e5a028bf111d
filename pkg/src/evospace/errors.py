"""Exception hierarchy shared by all modules."""


class EvoSpaceError(Exception):
    """Base class for errors raised by evospace."""


class DimensionError(EvoSpaceError, ValueError):
    pass


class TimeDomainError(EvoSpaceError, ValueError):
    """A time argument lies outside ``[0, T]``."""


class StencilError(EvoSpaceError, ValueError):
    """A finite-difference stencil does not fit inside ``[0, T]``."""


class SingularGramError(EvoSpaceError, ArithmeticError):
    """A Gram or system matrix is numerically singular or not SPD."""


class CompatibilityError(EvoSpaceError):
    """A sampled space family violates positive definiteness."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class PreconditionError(EvoSpaceError, ValueError):
    pass


class BlowUpError(EvoSpaceError, ArithmeticError):
    """The time stepper produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MemoryGuardError(EvoSpaceError, MemoryError):
    pass


class ConfigError(EvoSpaceError, ValueError):
    """Malformed run configuration; carries the offending position."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"line {line}, column {column or 1}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column
