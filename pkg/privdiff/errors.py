"""Exception hierarchy shared by the privdiff library, CLI and service."""

from typing import Optional


class PrivDiffError(ValueError):
    """Base class for every error raised by privdiff."""


class GraphValidationError(PrivDiffError):
    """A graph, vector or perturbation violates its invariants."""


class EdgeListFormatError(GraphValidationError):
    """An edge-list line could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class SizeGuardError(PrivDiffError):
    """Input exceeds the size guard of a dense or quadratic routine."""


class InfeasibleBudgetError(PrivDiffError):
    """No noise scale / flip probability meets the requested privacy budget."""


class ConfigError(PrivDiffError):
    """Experiment configuration is invalid."""
