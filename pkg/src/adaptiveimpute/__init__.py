"""Matrix completion via adaptively thresholded SVD, plus softImpute baselines."""

__version__ = "0.1.0"

from .linalg import (
    ClipBounds,
    CompositeMatrix,
    DataError,
    LowRankFactor,
    ObservedMatrix,
    SVDConvergenceError,
    truncated_svd,
)

__all__ = [
    "ClipBounds",
    "CompositeMatrix",
    "DataError",
    "LowRankFactor",
    "ObservedMatrix",
    "SVDConvergenceError",
    "truncated_svd",
    "__version__",
]
