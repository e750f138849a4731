"""Exception types raised across the package."""


class SafeRecError(Exception):
    """Base class for all package errors."""


class SchemaError(SafeRecError):
    """A required column is missing from an input file."""

    def __init__(self, column: str, available=()):
        self.column = column
        self.available = list(available)
        msg = f"missing column {column!r}"
        if self.available:
            msg += f" (available: {', '.join(self.available)})"
        super().__init__(msg)


class ParseError(SafeRecError):
    """A data row could not be parsed."""

    def __init__(self, row: int, reason: str):
        self.row = row
        super().__init__(f"row {row}: {reason}")


class MissingScoreError(SafeRecError, KeyError):
    """No score is available for a (user, item) pair."""

    def __init__(self, user, item):
        self.user = user
        self.item = item
        super().__init__(f"no score for user={user!r} item={item!r}")

    def __str__(self):
        return self.args[0]


class DivergenceError(SafeRecError):
    """Training loss became non-finite."""


class InfeasibleAlphaError(SafeRecError, ValueError):
    """Target risk level is below what the calibration size can certify."""
