"""Input-invex neural networks and connected-set classifiers."""

from .tensor import Tensor, grad, no_grad

__all__ = ["Tensor", "grad", "no_grad"]
__version__ = "0.1.0"
