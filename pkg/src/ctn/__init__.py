"""Crowd density estimation with a Crowd Transformer Network on a numpy autodiff engine."""

from .autograd import ContractViolation, Tensor
from .kernels import BACKEND
from .model import CTN, AttentionConfig, ModelConfig

__version__ = "0.1.0"

__all__ = ["BACKEND", "CTN", "AttentionConfig", "ContractViolation", "ModelConfig", "Tensor", "__version__"]
