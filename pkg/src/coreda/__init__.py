"""Contrastive-regression domain adaptation for video score regression."""

from .numkernel import Tensor, no_grad
from .synthdata import VideoSample

__version__ = "0.1.0"

__all__ = ["Tensor", "VideoSample", "no_grad", "__version__"]
