"""Exception hierarchy for tensorsat."""


class TensorSatError(Exception):
    """Base class for all tensorsat errors."""


class SExprError(TensorSatError):
    """Malformed S-expression text."""


class GraphParseError(TensorSatError):
    """Syntax or validation error in a graph/rule/cost file, with location."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeMismatch(TensorSatError):
    """Operator inputs violate its shape/type preconditions."""


class MissingSplitOrigin(ShapeMismatch):
    """split applied on an axis with no recorded concat boundary."""


class AnalysisMergeError(TensorSatError):
    """Two e-classes with incompatible analysis data were unioned.

    This indicates an unsound rewrite rule (shapes should have been
    checked before the union)."""


class UnknownSignature(TensorSatError):
    """Strict cost-table lookup miss."""


class ExtractionError(TensorSatError):
    """Base class for extraction failures."""


class NoFiniteExtraction(ExtractionError):
    """Every selection for the root e-class has infinite cost (all paths cyclic/filtered)."""


class InfeasibleModel(ExtractionError):
    """The ILP has no feasible solution."""


class SolveTimeout(ExtractionError):
    """Time limit hit before any feasible incumbent was found."""


class CyclicSelection(ExtractionError):
    """A solved selection induces a cyclic graph (filter list was insufficient)."""


class ReconstructError(ExtractionError):
    """Selection cannot be materialized as a DAG (cycle or missing class)."""
