"""Sum-of-squares stability certification for polynomial systems in feedback
with neural-network controllers."""

from .errors import CompileError, ExtractionError, ModelError, NnsosError, SolverError
from .poly import Polynomial, Universe, monomial_basis

__all__ = [
    "CompileError",
    "ExtractionError",
    "ModelError",
    "NnsosError",
    "SolverError",
    "Polynomial",
    "Universe",
    "monomial_basis",
]

__version__ = "0.1.0"
