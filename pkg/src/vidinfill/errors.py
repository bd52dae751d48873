"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions are inconsistent with what an operation requires."""


class PartitionError(ValueError):
    """Boundary indices do not describe a valid preceding/intermediate/following split."""


class TimestepError(ValueError):
    pass


class TensorFormatError(ValueError):
    """A tensor file is truncated, has a bad magic number, or an unknown dtype."""


class EmbedderError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    """Non-finite values showed up during sampling or training."""


class ConfigError(ValueError):
    pass
