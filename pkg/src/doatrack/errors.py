"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(RuntimeError):
    """Missing, corrupt, or incompatible data on disk."""


class ShapeError(ValueError):
    """Tensor/array shape mismatch."""


class AugmentationError(RuntimeError):
    """Scene pair cannot be mixed without exceeding the overlap budget."""


class EvaluationError(RuntimeError):
    """Reference/prediction sequences cannot be compared."""


class TrainingDivergence(RuntimeError):
    """Loss became non-finite. Carries the path of the last finite checkpoint."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
