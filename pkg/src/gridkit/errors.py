"""Exception hierarchy shared by every gridkit module."""


class GridkitError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class CaseError(GridkitError):
    """Malformed or inconsistent case description."""


class DimensionError(GridkitError, ValueError):
    pass


class ConvergenceError(GridkitError):
    pass


class SingularSystemError(GridkitError):
    """A linear system needed by a solver is singular or rank deficient."""


class InfeasibleError(GridkitError):
    pass


class UnobservableError(SingularSystemError):
    pass
