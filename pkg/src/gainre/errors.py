"""Exception hierarchy shared across the package."""


class GainError(Exception):
    """Base class for all package errors."""


class DimensionError(GainError, ValueError):
    pass


class ArgumentError(GainError, ValueError):
    pass


class NumericError(GainError, FloatingPointError):
    pass


class TapeError(GainError, RuntimeError):
    pass


class ParseError(GainError, ValueError):
    """Raised when an input file does not match the expected schema.

    The message always carries a location (document title and field path)
    so a malformed record can be found in a large corpus file.
    """

    def __init__(self, message: str, title: str | None = None, field: str | None = None):
        loc = []
        if title is not None:
            loc.append(f"document {title!r}")
        if field is not None:
            loc.append(f"field {field}")
        prefix = f"[{', '.join(loc)}] " if loc else ""
        super().__init__(prefix + message)
        self.title = title
        self.field = field


class ValidationError(ParseError):
    pass


class ConfigError(GainError, ValueError):
    pass


class UnsupportedConfigError(ConfigError):
    pass


class CheckpointError(GainError, RuntimeError):
    pass
