"""Exception types shared across the engine."""


class HHEngineError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(HHEngineError):
    """Invalid parameter set, channel layout mismatch, or bad config file."""


class UsageError(HHEngineError):
    """Caller passed structurally invalid arguments (empty input, length mismatch)."""


class NumericalOverflowError(HHEngineError):
    """State became non-finite during forward simulation."""

    def __init__(self, message: str, step_index: int | None = None):
        if step_index is not None:
            message = f"{message} (step {step_index})"
        super().__init__(message)
        self.step_index = step_index


class GradientOverflowError(HHEngineError):
    """Adjoint state became non-finite during the backward pass."""

    def __init__(self, message: str, step_index: int | None = None):
        if step_index is not None:
            message = f"{message} (step {step_index})"
        super().__init__(message)
        self.step_index = step_index


class TrainingDivergedError(HHEngineError):
    """Loss became non-finite during fitting."""

    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class KeygenError(HHEngineError):
    """Key search failed to cover all codes within its budget."""


class KeyIntegrityError(HHEngineError):
    """Recomputed filter-bank codes do not form a byte permutation."""
