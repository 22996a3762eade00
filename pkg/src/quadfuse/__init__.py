"""Hybrid ViT + quadrant-GCN classifier with attention fusion, built on a small
numpy autodiff engine."""

from .kernels import BACKEND as KERNEL_BACKEND
from .rng import Rng

__version__ = "0.1.0"

__all__ = ["Rng", "KERNEL_BACKEND", "__version__"]
