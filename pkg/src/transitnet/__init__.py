"""transitnet: a small, fully self-contained CNN training engine.

Dense NCHW tensors, hand-written forward/backward passes for the usual
convolutional layers, a multi-scale transition block that collapses each
branch with global average pooling, Nesterov-momentum training, ROC/AUC
evaluation, and a cross-validation CLI.  Every backward rule is verified
against finite differences; see the ``gradcheck`` command.
"""

from .errors import (
    ConfigError,
    DataError,
    FormatError,
    GraphError,
    NumericError,
    ParameterError,
    ShapeError,
    TransitnetError,
    UsageError,
)
from .tensor import Rng, Shape4, Tensor, derive_seed, make_tensor, matmul, sample_normal

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "FormatError", "GraphError", "NumericError",
    "ParameterError", "ShapeError", "TransitnetError", "UsageError",
    "Rng", "Shape4", "Tensor", "derive_seed", "make_tensor", "matmul",
    "sample_normal", "__version__",
]
