"""Non-training machinery for an RGB-D noise-to-box detection pipeline."""

from ._accel import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
