"""Exception types shared across the package."""


class NatsegError(Exception):
    """Base class for all package errors."""


class ShapeError(NatsegError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(NatsegError, ValueError):
    """Invalid configuration value (bad dimension, divisibility, unknown key)."""


class GraphError(NatsegError, RuntimeError):
    """Autodiff contract violation: non-scalar root, double backward, consumed tape."""


class DegenerateStatsError(NatsegError, ValueError):
    """Batch statistics undefined (single element per channel)."""


class DataError(NatsegError, ValueError):
    """Ingestion failure: undecodable raster, size mismatch, bad channel count."""


class CheckpointError(NatsegError, RuntimeError):
    """Checkpoint load/save failure: bad magic, version or shape mismatch, truncation."""


class MetricError(NatsegError, ValueError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class TrainingAborted(NatsegError, RuntimeError):
    """Training halted on a non-finite loss; carries the epoch/step of the failure."""

    def __init__(self, message: str, epoch: int, step: int):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
