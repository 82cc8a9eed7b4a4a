"""Exception hierarchy shared across the package."""


class SteexlabError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SteexlabError):
    """An array does not match the dimensions required by the dataset profile."""


class InvalidMaskError(SteexlabError):
    """A semantic mask contains labels outside {1..N}."""


class CounterClassError(SteexlabError):
    """The requested counter class is invalid for the model's prediction."""


class UnsupportedModelError(SteexlabError):
    """The operation is not defined for this model (e.g. auto-flip on a non-binary head)."""


class NumericalFailureError(SteexlabError):
    """The optimization produced a non-finite value.

    Carries the step index at which the failure occurred and the trajectory
    recorded up to that point.
    """

    def __init__(self, message: str, step: int, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory if trajectory is not None else []


class TrainingDivergedError(SteexlabError):
    """Training hit a non-finite loss. The last good checkpoint, if any, is retained."""

    def __init__(self, message: str, last_good_checkpoint=None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint


class DatasetError(SteexlabError):
    """A dataset directory or ingestion source is malformed."""


class ConfigError(SteexlabError):
    """A configuration file or argument set is invalid (including unknown keys)."""


class RegistryError(SteexlabError):
    """Model registry inconsistency: unknown id, duplicate id, or digest mismatch."""
