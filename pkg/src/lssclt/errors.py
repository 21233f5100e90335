"""Exception hierarchy shared by every lssclt module."""

from __future__ import annotations


class LSSCLTError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(LSSCLTError, ValueError):
    pass


class ValidationError(InvalidArgument):
    """A configuration value violates a model invariant."""


class ParseError(LSSCLTError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class NonConvergence(LSSCLTError, ArithmeticError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class QuadratureNotConverged(NonConvergence):
    pass


class SingularFactor(LSSCLTError, ArithmeticError):
    """A resolvent factor 1 + t*s vanished; the contour touches the spectrum."""


class BranchViolation(LSSCLTError, ArithmeticError):
    """|a_n(z1, z2)| >= 1 somewhere, so the principal logarithm is unsafe."""


class DegenerateFunction(LSSCLTError, ValueError):
    def __init__(self, message: str, mu_n: float = 0.0):
        self.mu_n = mu_n
        super().__init__(message)


class MissingDerivative(InvalidArgument):
    pass


class EvalFailure(LSSCLTError, ValueError):
    pass


class BernsteinOverflow(LSSCLTError, OverflowError):
    pass


class DegenerateTruncation(LSSCLTError, ValueError):
    pass


class LinAlgFailure(LSSCLTError, ArithmeticError):
    pass
