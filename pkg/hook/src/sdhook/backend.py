"""Denoising backend interface the orchestrator drives.

A backend owns inversion, the per-step denoising update, feature taps at
its self-attention modules, and latent/image codecs.  The orchestrator is
backend-agnostic: the Stable Diffusion backend (sd module) and the
synthetic backend (synthetic module) implement the same surface.

``step`` runs one denoising iteration and calls ``editor(layer_id,
features)`` at every tapped module with the h x w x c float32 tensor at the
configured tap point; the editor returns a replacement tensor (injected in
place of the original, feeding the rest of the step) or None to observe
without modifying.
"""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np

#: editor(layer_id, features) -> replacement features or None
FeatureEditor = Callable[[int, np.ndarray], "np.ndarray | None"]


class DenoiseBackend(Protocol):
    steps: int
    image_size: int

    def modules_per_block(self) -> dict[int, int]:
        """Self-attention module count per tappable up-block index."""
        ...

    def feature_hw(self, layer_id: int) -> tuple[int, int]:
        """Spatial grid of the tapped tensor for a wire layer id."""
        ...

    def latent_hw(self) -> tuple[int, int]:
        ...

    def prepare_image(self, image: np.ndarray) -> np.ndarray:
        """Canonicalize an input image (resize to the working resolution)."""
        ...

    def invert(self, image: np.ndarray):
        """Image -> per-step trajectory enabling faithful reconstruction."""
        ...

    def begin(self, inversion):
        """Start a denoising branch from an inversion; returns branch state."""
        ...

    def step(self, branch, i: int, editor: FeatureEditor | None = None) -> None:
        ...

    def latents(self, branch) -> np.ndarray:
        """Current branch latent as h x w x c float32."""
        ...

    def set_latents(self, branch, latent: np.ndarray) -> None:
        ...

    def decode(self, branch) -> np.ndarray:
        """Current branch latent decoded to an H x W x 3 uint8 image."""
        ...


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio between two uint8 images, in dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = ((a - b) ** 2).mean()
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(255.0 ** 2 / mse)
