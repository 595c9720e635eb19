"""Exception hierarchy shared across the package."""


class FinslerError(Exception):
    """Base class for all package errors."""


class JetDomainError(FinslerError):
    """Elementary function evaluated outside its smooth domain (log of a
    non-positive constant term, division by zero, abs at zero, ...)."""


class ParseError(FinslerError):
    """Expression syntax error; carries the byte offset of the offender."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalError(FinslerError):
    """Domain error raised while evaluating an expression; carries the byte
    offset of the AST node that failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class InadmissiblePointError(FinslerError):
    """Fiber point outside the Lagrangian's admissible cone."""


class DegenerateMetricError(FinslerError):
    """|det g| fell below the relative degeneracy threshold."""


class NewtonConvergenceError(FinslerError):
    """Legendre inversion failed to converge or left the admissible cone."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class GateRefusedError(FinslerError):
    """An applicability gate refused to run (e.g. the Finslerian divergence
    theorem on a space with nonzero mean Cartan torsion)."""


class ConfigError(FinslerError):
    """Malformed run configuration."""
