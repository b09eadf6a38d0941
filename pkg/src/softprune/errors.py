"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """Invalid argument, option, or experiment configuration."""


class ShapeError(ValueError):
    """Tensor shapes do not line up with the model they describe."""


class FormatError(ValueError):
    """A file on disk does not match its documented format."""


class SequencingError(RuntimeError):
    """An operation was called out of its required order."""


class StateError(RuntimeError):
    """An accumulator was queried before it held the required data."""


class UndefinedMetricError(ValueError):
    """The requested metric is undefined for this task count."""


class ConfigValidationError(ConfigurationError):
    """Carries the full list of config validation failures."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
