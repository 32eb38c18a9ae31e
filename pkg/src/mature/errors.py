"""Exception types shared across the package."""


class MatureError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MatureError, ValueError):
    """Incompatible array shapes; the message names both shapes."""


class ContractError(MatureError, ValueError):
    """A caller violated a documented precondition."""


class SpecError(MatureError, ValueError):
    """A ModelSpec is internally inconsistent."""


class DataError(MatureError, ValueError):
    """Malformed input data; the message names the offending location."""


class ConfigError(MatureError, ValueError):
    """Bad configuration file or unknown configuration key."""


class CheckpointError(MatureError, ValueError):
    """Unreadable checkpoint or checkpoint/config mismatch."""


class DivergenceError(MatureError, RuntimeError):
    """Training produced a non-finite loss or gradient."""
