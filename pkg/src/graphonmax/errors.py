"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside its mathematical domain."""


class SingularityError(ArithmeticError):
    """Evaluation requested exactly at a singular point (e.g. entropy
    derivatives at 0 or 1, or a vanishing elimination denominator)."""


class EliminationSingularError(SingularityError):
    """d1 == d2 (or h'(d1) == h'(d2)): the multiplier elimination is undefined."""


class ProfileError(RuntimeError):
    """A psi profile failed to produce an interior maximizer."""


class BadDensityError(ValueError):
    """Base density rejected by the bad-value scan (degenerate maximizer)."""


class ConvergenceError(RuntimeError):
    """Newton iteration failed to converge; continuation is required."""


class PathEndError(RuntimeError):
    """Continuation step size underflowed.  Carries the partial path."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class FormatError(ValueError):
    """Malformed input file (graphon text format, edge list, CSV)."""
