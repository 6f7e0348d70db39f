"""Exception hierarchy shared by every stage of the pipeline."""


class GlyphForgeError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GlyphForgeError, ValueError):
    pass


class ConfigError(GlyphForgeError, ValueError):
    pass


class DataError(GlyphForgeError, ValueError):
    pass


class LayoutError(DataError):
    """Dataset directory does not follow the ``root/<letter>/<file>`` layout."""


class StateError(GlyphForgeError, RuntimeError):
    pass


class NumericError(GlyphForgeError, ArithmeticError):
    pass


class FormatError(GlyphForgeError, ValueError):
    """Malformed model file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IntegrityError(GlyphForgeError, ValueError):
    pass
