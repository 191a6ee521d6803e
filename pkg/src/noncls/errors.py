"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation errors exit 2, numerical
failures exit 3, and non-converged-but-finished runs exit 4.
"""


class NonclsError(Exception):
    """Base class for package-specific failures."""


class ValidationError(NonclsError, ValueError):
    """Violated precondition, malformed file, or infeasible configuration."""


class TruncationError(NonclsError):
    """A truncation window leaves more probability mass outside than allowed."""


class InstabilityError(NonclsError):
    """A numerical evaluation could not certify its target accuracy."""


class DegenerateConditionError(NonclsError):
    """Post-selection on an essentially impossible outcome."""


class EmptyClassError(ValidationError):
    """A labeled data set has one or more empty classes."""

    def __init__(self, empty_classes):
        self.empty_classes = list(empty_classes)
        super().__init__(f"classes without samples: {self.empty_classes}")


class DivergenceError(NonclsError):
    """Training loss became non-finite."""
