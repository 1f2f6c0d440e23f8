"""Exception hierarchy.

Everything raised on purpose derives from :class:`HFIndexError`. The two
intermediate classes decide the CLI exit code: :class:`InputError` maps to 1,
:class:`InvariantViolation` to 2.
"""

from __future__ import annotations


class HFIndexError(Exception):
    pass


class InputError(HFIndexError):
    """Bad or inconsistent input data."""


class InvariantViolation(HFIndexError):
    """An internal identity or bound failed during computation."""


class InvalidCalendarError(InputError):
    pass


class IncompleteDataError(InputError):
    def __init__(self, message: str, fund_ids: list[str] | None = None):
        self.fund_ids = sorted(fund_ids or [])
        if self.fund_ids:
            message = f"{message}: {', '.join(self.fund_ids)}"
        super().__init__(message)


class InsufficientDataError(InputError):
    pass


class MissingStrategyError(InputError):
    pass


class NoEligibleFundsError(InputError):
    pass


class ZeroNotionalError(InputError):
    pass


class EmptyIndexError(InputError):
    pass


class FinalizedMonthError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class SchemaError(ParseError):
    pass


class SnapshotVersionError(InputError):
    pass


class SnapshotIntegrityError(InputError):
    pass


class LevelCollapseError(InvariantViolation):
    pass


class DegenerateDenominatorError(InvariantViolation):
    pass


class ConservationError(InvariantViolation):
    def __init__(self, message: str, worst_fund: str | None = None, error: float = 0.0):
        self.worst_fund = worst_fund
        self.error = error
        super().__init__(message)
