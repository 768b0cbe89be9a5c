"""Nearest-neighbor mask resampling between image, latent, and tap resolutions.

Object masks are produced externally at image resolution; the hook only
resamples them.  Source index for output cell i is floor(i * src / dst),
the standard nearest-neighbor convention.
"""

from __future__ import annotations

import numpy as np


def nearest_indices(dst: int, src: int) -> np.ndarray:
    return (np.arange(dst) * src // dst).astype(np.int64)


def resize_mask(bits: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Resample a binary h x w mask to ``shape`` by nearest neighbor."""
    bits = np.asarray(bits).astype(bool)
    ys = nearest_indices(shape[0], bits.shape[0])
    xs = nearest_indices(shape[1], bits.shape[1])
    return bits[np.ix_(ys, xs)]


def resize_image(image: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize of an h x w x c image."""
    image = np.asarray(image)
    ys = nearest_indices(shape[0], image.shape[0])
    xs = nearest_indices(shape[1], image.shape[1])
    return image[np.ix_(ys, xs)]
