"""Exception types shared across the package."""


class DiffCoDesignError(Exception):
    """Base class for all package-specific errors."""


class NonClosedCage(DiffCoDesignError):
    """Cage surface is not a closed, consistently oriented 2-manifold."""


class PointOutsideCage(DiffCoDesignError):
    """A query point lies strictly outside the cage beyond tolerance."""


class DimensionMismatch(DiffCoDesignError):
    """Operand dimensions are inconsistent."""


class DepthExceeded(DiffCoDesignError):
    """Grammar expansion still holds nonterminals at the depth limit."""


class LayoutMismatch(DiffCoDesignError):
    """Connection-handle layouts of two components do not coincide."""


class OutOfBounds(DiffCoDesignError):
    """Parameter vector violates its box bounds."""


class ConstraintViolation(DiffCoDesignError):
    """A fabrication constraint would be violated (off-axis deformation)."""


class IndexOutOfRange(DiffCoDesignError):
    """A vertex/handle index is out of range."""


class DegenerateBody(DiffCoDesignError):
    """A body's bounding cuboid collapsed below the minimum extent."""


class DegenerateCage(DiffCoDesignError):
    """A cage triangle collapsed below the minimum area."""


class SingularMassMatrix(DiffCoDesignError):
    """The reduced mass matrix is numerically singular."""


class NewtonDivergence(DiffCoDesignError):
    """Newton's method failed to reach tolerance within the iteration cap."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class MissingRecords(DiffCoDesignError):
    """Trajectory was produced without adjoint records."""


class EvaluatorFailure(DiffCoDesignError):
    """Objective evaluation failed inside the optimizer."""


class ConfigError(DiffCoDesignError):
    """Run configuration failed schema validation."""
