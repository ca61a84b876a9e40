"""Exception hierarchy.

Every domain failure derives from :class:`DomainError`; the CLI maps those to
exit code 1 and prints the class name.  Scene validation problems raise
:class:`SchemaError` (exit code 2).
"""


class DomainError(Exception):
    """Base class for numerical/physical failures."""


class NonPositiveDefinite(DomainError):
    pass


class AssumptionViolated(DomainError):
    pass


class OutOfDomain(DomainError):
    pass


class CholeskyFailure(DomainError):
    pass


class LabelingAmbiguity(DomainError):
    pass


class MissingEigenvectors(DomainError):
    pass


class IncommensurateDomain(DomainError):
    pass


class WindowMismatch(DomainError):
    pass


class WindowTouchesThreshold(DomainError):
    pass


class SingularFiber(DomainError):
    pass


class NoCommonGap(DomainError):
    pass


class ConvergenceFailure(DomainError):
    pass


class InsufficientBands(DomainError):
    pass


class SolverDivergence(DomainError):
    pass


class BoundaryContamination(DomainError):
    pass


class WindowViolation(DomainError):
    pass


class ContextMismatch(DomainError):
    pass


class GridMismatch(DomainError):
    pass


class NonSeparation(DomainError):
    pass


class GapOnEitherSide(DomainError):
    pass


class SchemaError(Exception):
    """Scene file failed validation; ``pointer`` is a JSON pointer."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
