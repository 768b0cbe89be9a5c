"""Deterministic synthetic denoising backend.

Stands in for the diffusion model in tests and offline experiments: the
"inversion" records per-step noise that the denoising loop removes again,
so an undisturbed run reconstructs the input exactly, while injected
features feed back into the latent through a local, mask-respecting
update.  Everything is seeded, so runs are bit-reproducible.

Geometry mirrors the real model's shape: latent at image_size/8, tap
blocks at half (block 2) and full (block 3) latent resolution, several
self-attention modules per block.
"""

from __future__ import annotations

import logging
import zlib

import numpy as np

from .backend import FeatureEditor
from .config import TAP_AFTER, TAP_BEFORE
from .masks import resize_image

log = logging.getLogger(__name__)

LATENT_CHANNELS = 4
FEATURE_CHANNELS = 8
#: gain of the feature-to-latent feedback; small keeps dynamics tame
_FEEDBACK = 0.05


class _Inversion:
    def __init__(self, x_start: np.ndarray, noises: np.ndarray):
        self.x_start = x_start
        self.noises = noises


class _Branch:
    def __init__(self, x: np.ndarray, noises: np.ndarray):
        self.x = x
        self.noises = noises


class SyntheticBackend:
    def __init__(self, steps: int = 100, image_size: int = 64,
                 tap_point: str = TAP_BEFORE, seed: int = 0,
                 modules: dict[int, int] | None = None):
        if image_size < 16 or image_size % 16:
            raise ValueError(f"image_size must be a multiple of 16, got {image_size}")
        self.steps = steps
        self.image_size = image_size
        self.tap_point = tap_point
        self.seed = seed
        self._modules = dict(modules) if modules else {2: 2, 3: 1}
        self._latent = image_size // 8
        # fixed per-layer projections, seeded by the wire layer id
        self._proj: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    # --- geometry ---------------------------------------------------------------

    def modules_per_block(self) -> dict[int, int]:
        return dict(self._modules)

    def layer_ids(self) -> list[int]:
        return [10 * b + j for b in sorted(self._modules) for j in range(self._modules[b])]

    def _factor(self, layer_id: int) -> int:
        block = layer_id // 10
        return max(1, 2 ** (3 - block))

    def feature_hw(self, layer_id: int) -> tuple[int, int]:
        f = self._factor(layer_id)
        return self._latent // f, self._latent // f

    def latent_hw(self) -> tuple[int, int]:
        return self._latent, self._latent

    # --- codecs -------------------------------------------------------------------

    def prepare_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.uint8)
        want = (self.image_size, self.image_size)
        if image.shape[:2] != want:
            log.warning("resizing input image %s -> %s", image.shape[:2], want)
            image = resize_image(image, want)
        return image

    def _encode(self, image: np.ndarray) -> np.ndarray:
        f = self.image_size // self._latent
        blocks = image.reshape(self._latent, f, self._latent, f, 3).astype(np.float32)
        rgb = blocks.mean(axis=(1, 3)) / 255.0
        gray = rgb.mean(axis=2, keepdims=True)
        return np.concatenate([rgb, gray], axis=2).astype(np.float32)

    def decode(self, branch: _Branch) -> np.ndarray:
        rgb = np.clip(branch.x[..., :3], 0.0, 1.0) * 255.0
        img = resize_image(rgb, (self.image_size, self.image_size))
        return np.round(img).astype(np.uint8)

    # --- inversion and stepping -----------------------------------------------------

    def invert(self, image: np.ndarray) -> _Inversion:
        image = self.prepare_image(image)
        w0 = self._encode(image)
        key = zlib.crc32(image.tobytes()) ^ self.seed
        rng = np.random.default_rng(key)
        noises = (rng.standard_normal((self.steps,) + w0.shape) * 0.1).astype(np.float32)
        x_start = w0 + noises.sum(axis=0)
        return _Inversion(x_start, noises)

    def begin(self, inversion: _Inversion) -> _Branch:
        return _Branch(inversion.x_start.copy(), inversion.noises)

    def _projections(self, layer_id: int):
        if layer_id not in self._proj:
            rng = np.random.default_rng(7_000_000 + layer_id)
            p_in = rng.standard_normal((LATENT_CHANNELS + 2, FEATURE_CHANNELS)).astype(np.float32)
            p_after = rng.standard_normal((FEATURE_CHANNELS, FEATURE_CHANNELS)).astype(np.float32)
            p_out = rng.standard_normal((FEATURE_CHANNELS, LATENT_CHANNELS)).astype(np.float32)
            self._proj[layer_id] = (p_in, p_after, p_out)
        return self._proj[layer_id]

    def _features(self, layer_id: int, x: np.ndarray) -> np.ndarray:
        """Local tap tensor: each feature pixel sees its own latent block."""
        p_in, p_after, _ = self._projections(layer_id)
        f = self._factor(layer_id)
        h = w = self._latent // f
        pooled = x.reshape(h, f, w, f, LATENT_CHANNELS).mean(axis=(1, 3))
        ys, xs = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
        z = np.concatenate([pooled, ys[..., None], xs[..., None]], axis=2,
                           dtype=np.float32)
        before = np.tanh(z @ p_in)
        if self.tap_point == TAP_AFTER:
            return np.tanh(before @ p_after)
        return before

    def _feedback(self, layer_id: int, features: np.ndarray) -> np.ndarray:
        """Map a tap tensor back to a latent-resolution delta (local, NN upsample)."""
        _, _, p_out = self._projections(layer_id)
        delta = (features @ p_out) * _FEEDBACK
        f = self._factor(layer_id)
        return np.repeat(np.repeat(delta, f, axis=0), f, axis=1)

    def step(self, branch: _Branch, i: int, editor: FeatureEditor | None = None) -> None:
        if editor is not None:
            for layer_id in self.layer_ids():
                feats = self._features(layer_id, branch.x)
                replacement = editor(layer_id, feats)
                if replacement is not None:
                    replacement = np.asarray(replacement, dtype=np.float32)
                    branch.x = branch.x + (self._feedback(layer_id, replacement)
                                           - self._feedback(layer_id, feats))
        branch.x = branch.x - branch.noises[i]

    def latents(self, branch: _Branch) -> np.ndarray:
        return branch.x.copy()

    def set_latents(self, branch: _Branch, latent: np.ndarray) -> None:
        if latent.shape != branch.x.shape:
            raise ValueError(f"latent shape {latent.shape} != {branch.x.shape}")
        branch.x = np.asarray(latent, dtype=np.float32).copy()
