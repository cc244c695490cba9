"""Exception hierarchy shared by every netcut module."""


class NetcutError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(NetcutError, ValueError):
    pass


class NumericInputError(NetcutError, ValueError):
    pass


class ContractError(NetcutError, ValueError):
    pass


class ConfigError(NetcutError, ValueError):
    pass


class LabelError(NetcutError, ValueError):
    pass


class FormatError(NetcutError, ValueError):
    """A file does not follow the expected binary or text layout."""


class CorruptionError(FormatError):
    """A file starts correctly but ends early or holds inconsistent records."""


class ConsistencyError(NetcutError, ValueError):
    pass


class DegenerateVectorError(NetcutError, ValueError):
    pass


class NonFiniteError(NetcutError, FloatingPointError):
    """Raised when a loss or gradient stops being finite."""
