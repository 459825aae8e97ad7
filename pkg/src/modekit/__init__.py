"""Modal analysis of (irregularly sampled) flow snapshots with DMD, SPOD and
multivariate Gaussian process regression."""

from .errors import AlignmentError, InvalidInput, ModekitError, NumericalError, ParseError, TrainingError

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "InvalidInput",
    "ModekitError",
    "NumericalError",
    "ParseError",
    "TrainingError",
    "__version__",
]
