class ToolchainError(Exception):
    """Base class for failures raised by this package."""


class ValidationError(ToolchainError):
    """Bad configuration or arguments."""


class ModelUnavailableError(ToolchainError):
    """A pretrained model (or the library that loads it) is not installed."""
