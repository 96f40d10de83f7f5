"""Exception hierarchy shared by every rgrl module."""


class RgrlError(Exception):
    """Base class for all rgrl errors."""


# ============================================================================
# NUMERICAL FAILURES
# ============================================================================

class NumericalError(RgrlError):
    """A numerical routine could not produce a trustworthy result."""


class SingularMatrix(NumericalError):
    """A pivot of the LU factorization fell below the singularity threshold."""

    def __init__(self, pivot: float, threshold: float):
        super().__init__(f"pivot magnitude {pivot:.3e} below threshold {threshold:.1e}")
        self.pivot = pivot
        self.threshold = threshold


class SingularJacobian(NumericalError):
    """The nonbasic block of the equality Jacobian is not invertible."""


class NonFiniteOutput(NumericalError):
    """A function evaluation returned NaN or Inf."""


class NoConvergence(NumericalError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class RestorationFailed(NumericalError):
    """Newton restoration of equality feasibility diverged inside GRG."""


class NumericalDivergence(NumericalError):
    """An iterate became non-finite."""


# ============================================================================
# CONSTRAINT SET-UP
# ============================================================================

class ConstraintSetupError(RgrlError):
    """The equality system cannot be partitioned as requested."""


class InconsistentSystem(ConstraintSetupError):
    """A redundant equality row contradicts the rows kept."""


class NoPerfectMatching(ConstraintSetupError):
    """The equality system cannot determine one nonbasic action per constraint."""

    def __init__(self, matched: int, required: int):
        super().__init__(f"maximum matching covers {matched} of {required} equality constraints")
        self.matched = matched
        self.required = required


# ============================================================================
# DATA, CONFIG AND CHECKPOINTS
# ============================================================================

class DataError(RgrlError):
    """An input data file could not be used."""


class SchemaError(DataError):
    """A data file does not follow its schema."""

    def __init__(self, path: str, row: int, column: str, message: str):
        super().__init__(f"{path}: row {row}, column '{column}': {message}")
        self.path = path
        self.row = row
        self.column = column


class ConfigError(RgrlError):
    """A run configuration is invalid."""


class CheckpointError(RgrlError):
    """A checkpoint is missing, corrupt, or from another format version."""
