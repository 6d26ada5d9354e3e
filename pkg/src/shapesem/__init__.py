"""shapesem: hierarchical shape/semantic decoding from simulated cortex
voxels, fused into images by a conditional encoder-decoder GAN."""

from .tensor import Tensor

__all__ = ["Tensor"]
__version__ = "0.1.0"
