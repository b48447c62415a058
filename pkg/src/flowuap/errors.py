"""Exception types shared across the package."""


class FlowUapError(Exception):
    pass


class ValidationError(FlowUapError, ValueError):
    """Bad input values (non-finite, negative counts, wrong shape)."""


class ConfigurationError(FlowUapError, ValueError):
    """Inconsistent configuration, missing artifact, or shape mismatch."""


class SchemaError(ConfigurationError):
    """Input columns do not match the dataset profile."""


class DegenerateGradientError(FlowUapError, ArithmeticError):
    """Loss gradient undefined (e.g. correlation of a constant vector)."""

    def __init__(self, loss_kind, message: str = ""):
        self.loss_kind = loss_kind
        super().__init__(message or f"degenerate gradient for loss {loss_kind}")


class DivergenceError(FlowUapError, RuntimeError):
    """Training produced a non-finite loss or parameter."""
