"""Exception types raised across the package."""


class MPAError(Exception):
    """Base class for package errors."""


class InvalidInput(MPAError, ValueError):
    pass


class ShapeError(MPAError, ValueError):
    pass


class MissingPronunciation(MPAError, KeyError):
    def __init__(self, word):
        super().__init__(word)
        self.word = word

    def __str__(self):
        return f"no pronunciation for {self.word!r}"


class UndefinedCorrelation(MPAError, ArithmeticError):
    pass


class DivergedError(MPAError, RuntimeError):
    pass


class InvalidState(MPAError, RuntimeError):
    pass


class FormatError(MPAError, ValueError):
    """Unreadable or unsupported file format / version."""
