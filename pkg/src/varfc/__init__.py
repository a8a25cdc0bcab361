"""Variable-rate feature compression for split image classification."""
from .model import VariableRateModel

__version__ = "0.1.0"
__all__ = ["VariableRateModel", "__version__"]
