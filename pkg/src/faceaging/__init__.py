"""Face age progression via a two-factor appearance model and sparse
recoding of age components."""

__version__ = "0.1.0"

from .errors import FaceAgingError

__all__ = ["FaceAgingError", "__version__"]
