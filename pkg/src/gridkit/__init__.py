"""gridkit: power-grid modelling, monitoring and optimisation at desk scale."""

__version__ = "0.1.0"

from .errors import (CaseError, ConvergenceError, DimensionError, GridkitError, InfeasibleError,
                     SingularSystemError, UnobservableError)
from .kernels import BACKEND
from .netmodel import (ComplexState, GridCase, build_admittance, build_dc, load_case, parse_case)

__all__ = ["__version__", "BACKEND", "CaseError", "ComplexState", "ConvergenceError", "DimensionError",
           "GridCase", "GridkitError", "InfeasibleError", "SingularSystemError", "UnobservableError",
           "build_admittance", "build_dc", "load_case", "parse_case"]
