"""Predict the memory a batch job will use from its submission attributes."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
