"""Exception types raised across the package."""


class NeedletError(Exception):
    """Base class for all package errors."""


class InvalidIndexError(NeedletError, ValueError):
    pass


class ChartDomainError(NeedletError, ValueError):
    """A point lies on a pole, outside the identity chart."""


class BandlimitError(NeedletError, ValueError):
    """A grid cannot represent or integrate the requested bandlimit."""


class InconsistentModesError(NeedletError, ValueError):
    pass


class UnsupportedSpinError(NeedletError, ValueError):
    pass


class InvalidParameterError(NeedletError, ValueError):
    pass


class InvalidInputError(NeedletError, ValueError):
    pass


class InvalidSpectraError(NeedletError, ValueError):
    """Spectra violate admissibility; ``l`` is the first offending degree."""

    def __init__(self, message, l=None):
        super().__init__(message)
        self.l = l


class TruncationError(NeedletError, ValueError):
    """A filter support extends past the available spectrum."""


class FormatError(NeedletError, ValueError):
    pass
