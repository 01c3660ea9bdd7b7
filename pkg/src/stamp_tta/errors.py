"""Shared exception types with explicit failure contracts."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, out of range, or inconsistent."""


class ParseError(ValueError):
    """A text input (dataset file, config file) could not be parsed.

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value; the message names the culprit."""
