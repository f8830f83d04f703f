"""Exception hierarchy shared by all modules."""


class BinFisherError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(BinFisherError, ValueError):
    """Two objects disagree on the number of bits (or vector length)."""


class ValidationError(BinFisherError, ValueError):
    """A value violates a type invariant.  ``field`` names the offender."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class FormatError(BinFisherError, ValueError):
    """A file does not follow its declared on-disk format."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class PaddingError(FormatError):
    pass
