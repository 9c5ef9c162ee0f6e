"""Exception hierarchy shared across the package."""


class TermnormError(Exception):
    """Base class for all package-specific errors."""


class MalformedInputError(TermnormError):
    """Raw input that cannot be cleaned into a usable entity string."""


class DataError(TermnormError):
    """Dataset-level inconsistency (bad rows, key mismatches, missing gold)."""


class ConfigError(TermnormError):
    """Invalid experiment configuration or config file."""


class ConformanceError(TermnormError):
    """A model adapter violates the masked-LM contract."""


class TemplateParseError(TermnormError):
    """Template spec string rejected; carries the offending position."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class RenderLengthError(TermnormError):
    """Rendered sequence cannot fit within the maximum length."""


class DivergenceError(TermnormError):
    """Non-finite values encountered during training or inference."""
