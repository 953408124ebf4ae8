"""Exception types shared across the package.

The CLI maps these onto exit codes: data/checkpoint problems -> 2,
numeric failures (ill-conditioned operators, diverged training,
undefined metrics) -> 3.
"""


class SicnnError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(SicnnError):
    """An input tensor has a shape the operation cannot accept."""


class ConfigError(SicnnError):
    """An architecture or plan description is invalid."""


class DataError(SicnnError):
    """Dataset ingestion failed (missing/truncated file, bad record)."""


class CheckpointError(SicnnError):
    """Checkpoint file is unreadable or disagrees with the model."""


class ModelStateError(SicnnError):
    """The model is not in the state the operation requires."""


class NumericError(SicnnError):
    """A numeric construction or metric is undefined or unstable."""


class TrainingDivergedError(SicnnError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int, step: int):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
