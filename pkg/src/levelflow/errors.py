"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class LevelflowError(Exception):
    """Base class; exit_code 1 unless a subclass narrows it."""

    exit_code = 1


class ConfigError(LevelflowError):
    """Bad or unknown configuration content."""

    exit_code = 2


class GridMismatch(LevelflowError):
    exit_code = 2


class AssumptionError(LevelflowError):
    """A structural assumption of the model fails on this input."""

    exit_code = 3


class NoThreshold(AssumptionError):
    """The sublevel-set speed never changes sign on the level range."""


class CoercivityViolation(AssumptionError):
    """A closed sublevel set touches the grid boundary frame."""


class MonotonicityViolation(AssumptionError):
    """A velocity law fails the required monotonicity on sampled lattices."""


class SignChange(AssumptionError):
    """Speed changes sign strictly inside a traversed displacement range."""


class SpeedCurveDescent(AssumptionError):
    """Raw speed-curve descent exceeds the geometry/measure error budget."""


class ResolutionError(LevelflowError):
    """The grid is too coarse for the requested computation."""

    exit_code = 4


class DomainOverflow(ResolutionError):
    """A parallel set would leave the grid margin."""


class MonotonicityRepairExceeded(ResolutionError):
    """Isotonic repair of the delta table moved a value beyond the budget."""


class ResolutionTooCoarse(ResolutionError):
    pass


class NonConvexInput(LevelflowError):
    exit_code = 2


class OutOfTable(LevelflowError):
    """Query outside a delta table's level or time range."""


class LevelRangeExhausted(ResolutionError):
    """Reconstruction hit the edge of the level grid."""


class CflViolation(LevelflowError):
    exit_code = 3


class FitUnstable(LevelflowError):
    """Too few usable samples for a power-law fit; verdict withheld."""

    exit_code = 4


class TailTooShort(LevelflowError):
    """Not enough post-transient snapshots for a decay fit."""

    exit_code = 4


class OutOfValidityWindow(LevelflowError):
    """Closed-form oracle queried outside its stated window."""


class HorizonOverflow(LevelflowError):
    """Delta solve truncated before the requested horizon (carried as a flag,
    raised only when a caller demands full coverage)."""

    exit_code = 4
