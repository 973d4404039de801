"""Exception types shared across the package."""


class UsageError(ValueError):
    """Raised when an operation is called outside its contract."""


class SpecError(UsageError):
    """A problem/network specification file is malformed.

    ``field`` carries a dotted path to the offending entry (``"f.Q"``,
    ``"X.intervals[1]"``) so the CLI can point at it.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
