"""Exception hierarchy.

Every error raised by the library derives from :class:`AmbddcError` so that
drivers can catch solver failures without swallowing programming errors.
"""


class AmbddcError(Exception):
    """Base class for all library errors."""


class NotPositiveDefinite(AmbddcError):
    pass


class Singular(AmbddcError):
    pass


class ZeroMatrix(AmbddcError):
    pass


class DegenerateElement(AmbddcError):
    pass


class EmptyFreeSet(AmbddcError):
    pass


class ResolutionTooCoarse(AmbddcError):
    pass


class NotDivisible(AmbddcError):
    pass


class InsufficientCandidates(AmbddcError):
    pass


class SingularInterior(AmbddcError):
    pass


class ZeroDiagonal(AmbddcError):
    pass


class IndefiniteSplit(AmbddcError):
    pass


class DimensionMismatch(AmbddcError):
    pass


class RigidModeLeak(AmbddcError):
    pass


class BreakdownError(AmbddcError):
    pass


class IndefiniteDetected(AmbddcError):
    pass


class FormatError(AmbddcError):
    pass


class PartitionMismatch(AmbddcError):
    pass


class StageError(AmbddcError):
    """Wraps an error raised inside a driver stage, keeping the stage label."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
