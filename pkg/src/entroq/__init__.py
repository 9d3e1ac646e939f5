"""entroq: desk-scale numerics for entropy-corrected variational quantization."""

from .constants import PhysicalConstants
from .grids import Axis

__version__ = "0.1.0"

__all__ = ["PhysicalConstants", "Axis", "__version__"]
