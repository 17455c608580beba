"""Mean-field analysis and simulation of symmetric multi-class loss networks with transfers."""

from .model import (
    ModelError,
    NetworkParams,
    StateSpace,
    StateSpaceCapError,
    UnsupportedModelError,
    enumerate_statespace,
    make_params,
)

__version__ = "0.1.0"

__all__ = [
    "ModelError",
    "NetworkParams",
    "StateSpace",
    "StateSpaceCapError",
    "UnsupportedModelError",
    "enumerate_statespace",
    "make_params",
    "__version__",
]
