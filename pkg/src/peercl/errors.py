"""Error types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is invalid; the message names the field."""


class MetricDomainError(ValueError):
    """A metric is undefined for the given matrix (e.g. zero accuracy in a ratio)."""


class IdxParseError(ValueError):
    """An IDX file is malformed; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
