"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``DegeneracyError`` -> 4.
"""


class SubtailError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SubtailError, ValueError):
    """Invalid parameters, model strings or experiment configs."""


class DomainError(ConfigError):
    """Argument outside the support of a distribution."""


class DataError(SubtailError):
    """Unreadable, empty or otherwise unusable data."""


class EmptySourceError(DataError):
    pass


class DegeneracyError(SubtailError):
    """A statistic is undefined for the data at hand."""


class NoExceedancesError(DegeneracyError):
    def __init__(self, threshold, subsample=None):
        self.threshold = threshold
        self.subsample = subsample
        where = "" if subsample is None else f" in subsample {subsample}"
        super().__init__(f"no value strictly exceeds threshold u={threshold!r}{where}")


class DegenerateMomentsError(DegeneracyError):
    pass


class DegeneratePwmError(DegeneracyError):
    pass


class TauTooLargeError(DegeneracyError):
    pass


class ZeroVarianceError(DegeneracyError):
    pass
