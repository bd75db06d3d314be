"""Exception hierarchy. Each family maps to a CLI exit code."""


class CDRBError(Exception):
    exit_code = 1


class ConfigError(CDRBError, ValueError):
    exit_code = 2


class FormatError(CDRBError):
    """Missing, corrupt or version-mismatched files."""

    exit_code = 3


class NumericError(CDRBError, ArithmeticError):
    exit_code = 4


class NonFiniteLoss(NumericError):
    pass


class NonFiniteOutput(NumericError):
    pass


class InfeasibleStateError(CDRBError, ValueError):
    pass


class RegionBlockedError(CDRBError, RuntimeError):
    pass


class NoPath(CDRBError, RuntimeError):
    pass


class InfeasibleEndpoint(CDRBError, ValueError):
    pass


class GoalNotReached(CDRBError, RuntimeError):
    pass


class TooShort(CDRBError, ValueError):
    pass


class EmptyBuffer(CDRBError, ValueError):
    pass


class DimensionMismatch(CDRBError, ValueError):
    pass


class InvalidK(CDRBError, ValueError):
    pass


class StepOutOfRange(CDRBError, IndexError):
    pass


class HorizonMismatch(CDRBError, ValueError):
    pass


class SizeMismatch(CDRBError, ValueError):
    pass


class NonPositiveReference(CDRBError, ValueError):
    pass


class ThresholdError(CDRBError):
    """A gated metric fell short of its required value."""

    exit_code = 5
