"""MPS tomography of quench dynamics in power-law XY spin chains.

Site indices are 0-based throughout the Python API. Local basis ordering is
(up, down), so ``Z = diag(1, -1)``, and site 0 is the most significant qubit
of every dense vector.
"""

from mpstomo.errors import (
    ConvergenceError,
    CoverageError,
    DataFormatError,
    MpsTomoError,
    SizeLimitError,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "CoverageError",
    "DataFormatError",
    "MpsTomoError",
    "SizeLimitError",
    "__version__",
]
