"""Desk-scale toolkit for lossy distributed source coding.

Learned conditional vector-quantized codecs with side information at
the decoder, classical references (exact binning, analytic Gaussian
bounds, Lloyd-Max quantization), and a two-worker gradient-compression
training simulator.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NdscError, NumericalError

__all__ = ["ConfigError", "DataError", "NdscError", "NumericalError",
           "__version__"]
