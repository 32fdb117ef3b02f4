"""Exception types shared across the package."""


class RlbfError(Exception):
    """Base class for all package errors."""


class IdentifiabilityError(RlbfError):
    """Too few retained samples to determine the expansion coefficients."""


class EigensolverError(RlbfError):
    """Eigendecomposition of the parameter correlation matrix failed."""


class DegenerateLeverageError(RlbfError):
    """Leverage of the center sample is (numerically) one: the sample
    carries the whole fit and the deleted residual is undefined."""


class ConfigError(RlbfError):
    """Inconsistent or invalid experiment configuration."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class NumericalError(RlbfError):
    """Unrecoverable numerical failure during stream processing."""

    def __init__(self, message: str, window_index: int | None = None):
        super().__init__(message)
        self.window_index = window_index
