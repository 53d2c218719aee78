"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: input errors -> 1, cap errors -> 2,
anything else -> 3.
"""


class SceneryLabError(Exception):
    """Base class for all errors raised by scenery_lab."""


class InputError(SceneryLabError, ValueError):
    """Malformed or out-of-contract input."""


class CapError(SceneryLabError):
    """A configured size cap (words, points, pairs) would be exceeded."""

    def __init__(self, what, requested, cap):
        self.what = what
        self.requested = requested
        self.cap = cap
        super().__init__(
            f"{what}: {requested} exceeds cap {cap} (raise it with a cap override)"
        )


class NoPathError(InputError):
    """No admissible connecting word exists between two symbols."""


class NotMixingError(InputError):
    """A construction needing an aperiodic (mixing) matrix got a periodic one."""


class NotTransitiveError(InputError):
    """A construction needing an irreducible matrix got a reducible one."""


class EmptyFrameError(InputError):
    """A zoom box carries zero mass."""


class DegenerateResultError(SceneryLabError):
    """A pipeline produced an empty or unusable result."""
