"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class InvDNError(Exception):
    exit_code = 1


class UsageError(InvDNError):
    exit_code = 2


class ImageIOError(InvDNError):
    exit_code = 3


class CheckpointError(InvDNError):
    exit_code = 3


class ConfigError(InvDNError):
    exit_code = 4


class DimensionError(ConfigError, ValueError):
    """Tensor extents do not satisfy an operation's shape contract."""


class CheckpointConfigMismatch(ConfigError):
    """A checkpoint was produced for a different model configuration."""


class MetricError(ConfigError):
    pass


class ContractError(InvDNError, RuntimeError):
    """Misuse of the autodiff API (e.g. backward on a non-scalar)."""

    exit_code = 5


class NumericError(InvDNError, FloatingPointError):
    exit_code = 5


class TrainingError(NumericError):
    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration
