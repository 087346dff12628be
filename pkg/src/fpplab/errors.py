"""Exception hierarchy for fpplab."""


class FPPError(Exception):
    """Base class for all fpplab errors."""


class InvalidSpec(FPPError, ValueError):
    pass


class BoxTooLarge(FPPError, ValueError):
    pass


class OutOfBox(FPPError, IndexError):
    pass


class ChecksumMismatch(FPPError):
    pass


class Unreached(FPPError):
    pass


class NoEntry(FPPError):
    pass


class DegenerateShape(FPPError):
    pass


class NonpositiveArg(FPPError, ValueError):
    pass


class ZeroVector(FPPError, ValueError):
    pass


class LengthMismatch(FPPError, ValueError):
    pass


class BoundaryContamination(FPPError):
    """Too many samples discarded because their geodesics hit the box boundary."""


class FitDegenerate(FPPError):
    pass


class UnderResolvedSector(FPPError, ValueError):
    pass


class BadOrientation(FPPError, ValueError):
    pass


class MissingSide(FPPError):
    pass


class Censored(FPPError):
    pass


class NonContinuousSpec(FPPError, ValueError):
    """Raised when a TestTable config reaches an experiment that needs a.s. unique geodesics."""


class ValidationError(FPPError, ValueError):
    """Experiment config failed schema validation."""
