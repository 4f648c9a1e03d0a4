"""Exception hierarchy shared across the package."""


class NnsosError(Exception):
    """Base class for all package errors."""


class ModelError(NnsosError):
    """Malformed model, mismatched variable universes or missing data."""


class CompileError(NnsosError):
    """An SOS program could not be lowered to SDP data."""


class ExtractionError(NnsosError):
    """Solution values requested from a non-feasible solve."""


class SolverError(NnsosError):
    """Numerical breakdown or backend failure inside a solver."""
