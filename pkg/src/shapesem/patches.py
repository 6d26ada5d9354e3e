"""Contrast-defined patch features: block averages over m x m pixel patches."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def extract_patch_features(image: np.ndarray, m: int) -> np.ndarray:
    """Average non-overlapping m x m blocks of an S x S image -> g x g grid.

    Row-major flattening of the result defines the shape vector fed to the
    decoders.
    """
    image = np.asarray(image, dtype=np.float64)
    s = image.shape[0]
    if image.shape != (s, s) or s % m:
        raise ConfigError("patch size %d must divide image size %s" % (m, image.shape))
    g = s // m
    return image.reshape(g, m, g, m).mean(axis=(1, 3)).astype(np.float32)


def upsample_nearest(grid: np.ndarray, m: int) -> np.ndarray:
    """Block-replicate a g x g grid to (g*m) x (g*m)."""
    return np.repeat(np.repeat(np.asarray(grid, dtype=np.float32), m, axis=0), m, axis=1)
