"""Two-level algebraic Schwarz preconditioners with spectral coarse spaces."""

from .errors import (ConfigError, DimensionMismatchError, FormatError,
                     IterationError, NotSPDError, RankDeficientError,
                     SchwarzLabError)
from .lacore import (EPS, EigResult, SymSparseMatrix, dense_generalized_eig,
                     extract_principal_submatrix, factor_spd, matvec, solve)

__version__ = "0.1.0"
