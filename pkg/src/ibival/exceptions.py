"""Exception and warning types raised across the toolkit."""


class IbivalError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(IbivalError, ValueError):
    """Input data violates a beat-series invariant."""


class NonMonotonicError(ValidationError):
    pass


class TooShortError(ValidationError):
    pass


class PhysiologicallyInvalidError(ValidationError):
    pass


class ParseError(ValidationError):
    """A beat file row could not be parsed."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConsistencyError(ParseError):
    """``interval_ms`` column disagrees with the timestamp differences."""


class SyncError(IbivalError):
    pass


class NoOverlapError(SyncError):
    pass


class DegenerateSearchError(SyncError, ValueError):
    pass


class EmptySeriesError(IbivalError, ValueError):
    pass


class EmptyPairSetError(IbivalError, ValueError):
    pass


class SingleClassError(IbivalError, ValueError):
    pass


class InvalidConfigError(IbivalError, ValueError):
    pass


class UnalignedWarning(UserWarning):
    """Matching was requested on series that look unsynchronized."""
