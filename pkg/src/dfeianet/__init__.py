"""DFE-IANet polyp-image classifier implemented on numpy.

Layers: :mod:`tensor`/:mod:`ops` (primitives and reverse-mode tape),
:mod:`wavelet`, :mod:`blocks` (MSFD / MSIA), :mod:`network`,
:mod:`weights` (file format), :mod:`data`/:mod:`optim`/:mod:`train`/
:mod:`metrics`, and :mod:`cli`.
"""
from .errors import (
    ConfigurationError,
    DfeError,
    IngestionError,
    UsageError,
    WeightFileError,
)
from .network import Model, NetworkConfig, build, count_flops, count_params, forward
from .tensor import Parameter, Tape, Tensor, backward, no_grad
from .wavelet import SubbandSet, dwt2, idwt2
from .weights import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DfeError", "IngestionError", "UsageError", "WeightFileError",
    "Model", "NetworkConfig", "build", "count_flops", "count_params", "forward",
    "Parameter", "Tape", "Tensor", "backward", "no_grad",
    "SubbandSet", "dwt2", "idwt2", "load_weights", "save_weights",
]
