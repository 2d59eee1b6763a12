"""Exception types shared across the package."""


class GlyphFusionError(Exception):
    """Base class for all package errors."""


class DimensionError(GlyphFusionError, ValueError):
    pass


class ArgumentError(GlyphFusionError, ValueError):
    pass


class ContractError(GlyphFusionError, RuntimeError):
    pass


class ConfigurationError(GlyphFusionError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ParseError(GlyphFusionError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GlyphMissingError(GlyphFusionError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "glyph missing"


class FormatError(GlyphFusionError, ValueError):
    pass


class CorruptionError(FormatError):
    pass


class TrainingAborted(GlyphFusionError, RuntimeError):
    pass
