"""Capsule network with Res2Net front end, stain normalization and evaluation tooling."""

from .model import ArchitectureConfig, MarginLossConfig, forward, init_params
from .tensor import Tensor

__all__ = ["ArchitectureConfig", "MarginLossConfig", "Tensor", "forward", "init_params"]
__version__ = "0.1.0"
