"""Exception taxonomy shared by all transitnet modules."""


class TransitnetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(TransitnetError):
    """Tensor or layer dimensions are inconsistent."""


class ParameterError(TransitnetError):
    """A hyperparameter or argument value is out of its valid range."""


class UsageError(TransitnetError):
    """An operation was invoked in an invalid sequence or mode."""


class DataError(TransitnetError):
    """A dataset, manifest, or label set is invalid."""


class FormatError(DataError):
    """A binary or text file does not match its declared format."""


class GraphError(TransitnetError):
    """A network graph is structurally invalid or fails shape inference."""


class NumericError(TransitnetError):
    """A computation produced NaN or Inf, violating the finiteness contract."""


class ConfigError(TransitnetError):
    """A run configuration (CLI flags, preset name, config file) is invalid."""
