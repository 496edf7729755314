"""Exception taxonomy.

Two families matter for the CLI: ``ValidationError`` (bad inputs, exit
code 2) and ``NumericError`` (a computation failed, exit code 3).
"""


class ToolkitError(Exception):
    """Base class for all package errors."""


class ValidationError(ToolkitError, ValueError):
    """Invalid arguments, shapes, or file contents."""


class ShapeError(ValidationError):
    """Dimension mismatch between inputs."""


class DegenerateNeuronError(ValidationError):
    """Operation requires a nonzero weight row."""


class DegenerateParamsError(ValidationError):
    """Operation requires a nonzero parameter vector."""


class InvalidMultiplierError(ValidationError):
    """Certificate multipliers must be nonnegative."""


class MergeLabelError(ValidationError):
    """Merge candidates carry different labels."""


class MergePatternError(ValidationError):
    """Merge candidates (or their blend) disagree on an activation pattern."""


class MergeMultiplierError(ValidationError):
    """Merge candidates need strictly positive multipliers."""


class SplitPatternError(ValidationError):
    """A split child leaves the parent's activation pattern."""

    def __init__(self, message: str, neuron: int):
        super().__init__(message)
        self.neuron = neuron


class SplitClassificationError(ValidationError):
    """A split child flips the parent's classification sign."""


class DegeneratePositionError(ValidationError):
    """Point sits exactly on a neuron boundary; the subgradient is set-valued."""


class SubspaceAssumptionError(ValidationError):
    """Construction requires a direction orthogonal to the whole set."""


class BudgetUnboundedError(ValidationError):
    """The requested budget formula degenerates; the split is unbounded."""


class HashMismatchError(ValidationError):
    """Stored artifact hash disagrees with the provided model/data."""


class NumericError(ToolkitError, RuntimeError):
    """A numeric procedure failed to produce a usable result."""


class TrainingDivergedError(NumericError):
    """Training loss left the finite range; carries the last finite trace."""

    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = trace


class AttackDivergedError(NumericError):
    """Every restart of the reconstruction attack diverged."""

    def __init__(self, message: str, restart_losses):
        super().__init__(message)
        self.restart_losses = restart_losses


class DefenseTransformError(NumericError):
    """Bias-shift equivalence probe failed beyond tolerance."""
