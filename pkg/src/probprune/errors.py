"""Exception types shared across the package."""


class ProbpruneError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(ProbpruneError):
    """Invalid configuration value or inconsistent layer geometry."""


class ShapeError(ProbpruneError):
    """Tensor shape does not match what a layer or operation expects."""


class DataFormatError(ProbpruneError):
    """A dataset file does not conform to its binary format."""


class CheckpointError(ProbpruneError):
    """Checkpoint file is corrupt, truncated, or of an unknown version."""


class PruneTimeoutError(ProbpruneError):
    """A pruning run exceeded its iteration budget before reaching the target sparsity."""


class NumericsError(ProbpruneError):
    """A forward or backward pass produced a non-finite value."""
