"""Exception types shared across the package."""


class PermucateError(Exception):
    """Base class for package-specific errors."""


class DimensionError(PermucateError, ValueError):
    """Shapes of inputs are inconsistent with each other or the model."""


class DegenerateLabelsError(PermucateError, ValueError):
    """A classification target contains a single class."""


class DegenerateInputError(PermucateError, ValueError):
    """Too few distinct samples to fit the requested model."""


class DataError(PermucateError, ValueError):
    """A dataset is malformed or missing required pieces (e.g. oracle)."""


class ConfigError(PermucateError, ValueError):
    """An experiment configuration is invalid; message names the offending key/line."""


class NumericError(PermucateError, ArithmeticError):
    """An internal numeric computation failed."""


class DiagnosticsUnavailableError(PermucateError, TypeError):
    """Linear diagnostics requested on a model without exposed coefficients."""
