"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class MpsTomoError(Exception):
    """Base class for errors raised by this package."""


class SizeLimitError(MpsTomoError):
    """Requested system size exceeds what the exact/dense path supports."""


class ConvergenceError(MpsTomoError):
    """An iterative numerical routine failed to reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None) -> None:
        super().__init__(message)
        self.residual = residual


class CoverageError(MpsTomoError):
    """Measurement data does not cover a required observable."""

    def __init__(self, message: str, missing: list[str] | None = None) -> None:
        super().__init__(message)
        self.missing = list(missing or [])


class DataFormatError(MpsTomoError):
    """A persisted artifact has the wrong version or violates an invariant."""

    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(message)
        self.line = line
