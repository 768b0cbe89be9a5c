"""Stable Diffusion v1.5 backend: inversion, taps, and per-step denoising.

Inversion follows the edit-friendly recipe: noisy latents are sampled
independently per step around the clean latent, and per-step noise
residuals are extracted so that replaying them reconstructs the input;
the output branch then denoises with those residuals while the feature
editors run inside the U-Net forward.

Taps sit on the self-attention modules of the configured up-blocks
(``attn1`` of each transformer block).  ``tap_point`` selects the module
input (default) or its output, for the after-self-attention ablation.

Heavy dependencies (torch, diffusers) are imported lazily; constructing
the backend without them, or without reachable weights, raises
BackendUnavailable with the underlying reason.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .backend import FeatureEditor
from .config import TAP_AFTER, TAP_BEFORE
from .errors import BackendUnavailable

log = logging.getLogger(__name__)

_LATENT_SCALE = 8  # VAE spatial downsampling of SD v1.x


def _import_torch_stack():
    try:
        import torch
        from diffusers import StableDiffusionPipeline
    except ImportError as e:
        raise BackendUnavailable(
            f"Stable Diffusion backend needs torch and diffusers: {e}") from e
    return torch, StableDiffusionPipeline


class _Inversion:
    def __init__(self, xts, zs, timesteps):
        self.xts = xts            # noisy latents, index 0 = noisiest
        self.zs = zs              # per-step noise residuals
        self.timesteps = timesteps


class _Branch:
    def __init__(self, x, inversion):
        self.x = x
        self.inversion = inversion


class StableDiffusionBackend:
    def __init__(self, model_id: str = "runwayml/stable-diffusion-v1-5",
                 steps: int = 100, image_size: int = 512,
                 tap_point: str = TAP_BEFORE, seed: int = 0,
                 device: str | None = None):
        torch, StableDiffusionPipeline = _import_torch_stack()
        self._torch = torch
        self.steps = steps
        self.image_size = image_size
        self.tap_point = tap_point
        self.seed = seed
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        try:
            pipe = StableDiffusionPipeline.from_pretrained(
                model_id, safety_checker=None, requires_safety_checker=False)
        except Exception as e:
            raise BackendUnavailable(f"cannot load checkpoint {model_id!r}: {e}") from e
        pipe.to(self.device)
        self.unet = pipe.unet
        self.vae = pipe.vae
        self.scheduler = pipe.scheduler
        with torch.no_grad():
            tokens = pipe.tokenizer([""], padding="max_length",
                                    max_length=pipe.tokenizer.model_max_length,
                                    return_tensors="pt")
            self._empty_emb = pipe.text_encoder(
                tokens.input_ids.to(self.device))[0]
        self.scheduler.set_timesteps(steps, device=self.device)
        self._timesteps = list(self.scheduler.timesteps)
        self._alphas = self.scheduler.alphas_cumprod.to(self.device)
        self._editor: FeatureEditor | None = None
        self._hooks = []
        self._install_taps()

    # --- geometry ---------------------------------------------------------------

    def modules_per_block(self) -> dict[int, int]:
        counts = {}
        for b, block in enumerate(self.unet.up_blocks):
            attns = getattr(block, "attentions", None)
            if attns:
                counts[b] = len(attns)
        return counts

    def _block_factor(self, block: int) -> int:
        # up-block b runs at latent resolution / 2^(3 - b) on the v1.5 U-Net
        return max(1, 2 ** (3 - block))

    def feature_hw(self, layer_id: int) -> tuple[int, int]:
        side = self.image_size // _LATENT_SCALE // self._block_factor(layer_id // 10)
        return side, side

    def latent_hw(self) -> tuple[int, int]:
        side = self.image_size // _LATENT_SCALE
        return side, side

    # --- taps ---------------------------------------------------------------------

    def _install_taps(self):
        backend = self

        def make_pre_hook(layer_id):
            def pre_hook(module, args, kwargs):
                if backend._editor is None or backend.tap_point != TAP_BEFORE:
                    return None
                hidden = args[0] if args else kwargs["hidden_states"]
                replaced = backend._edit(layer_id, hidden)
                if replaced is None:
                    return None
                if args:
                    return (replaced,) + args[1:], kwargs
                kwargs = dict(kwargs, hidden_states=replaced)
                return args, kwargs
            return pre_hook

        def make_post_hook(layer_id):
            def post_hook(module, args, output):
                if backend._editor is None or backend.tap_point != TAP_AFTER:
                    return None
                replaced = backend._edit(layer_id, output)
                return replaced
            return post_hook

        for b, block in enumerate(self.unet.up_blocks):
            attns = getattr(block, "attentions", None)
            if not attns:
                continue
            for j, attn in enumerate(attns):
                layer_id = 10 * b + j
                module = attn.transformer_blocks[0].attn1
                self._hooks.append(module.register_forward_pre_hook(
                    make_pre_hook(layer_id), with_kwargs=True))
                self._hooks.append(module.register_forward_hook(
                    make_post_hook(layer_id)))

    def _edit(self, layer_id: int, hidden):
        """(B, seq, C) torch tensor -> editor on h x w x c numpy -> back."""
        torch = self._torch
        seq, channels = hidden.shape[-2], hidden.shape[-1]
        side = int(math.isqrt(seq))
        feats = hidden[0].detach().float().cpu().numpy().reshape(side, side, channels)
        replaced = self._editor(layer_id, feats)
        if replaced is None:
            return None
        out = torch.from_numpy(np.ascontiguousarray(replaced, dtype=np.float32))
        out = out.reshape(1, seq, channels).to(device=hidden.device, dtype=hidden.dtype)
        return out.expand_as(hidden).contiguous() if hidden.shape[0] > 1 else out

    # --- codecs ---------------------------------------------------------------------

    def prepare_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.uint8)
        want = (self.image_size, self.image_size)
        if image.shape[:2] != want:
            log.warning("resizing input image %s -> %s", image.shape[:2], want)
            from .masks import resize_image
            image = resize_image(image, want)
        return image

    def _encode(self, image: np.ndarray):
        torch = self._torch
        x = torch.from_numpy(image.astype(np.float32) / 127.5 - 1.0)
        x = x.permute(2, 0, 1)[None].to(self.device)
        with torch.no_grad():
            posterior = self.vae.encode(x).latent_dist
        return posterior.mode() * self.vae.config.scaling_factor

    def decode(self, branch: _Branch) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            img = self.vae.decode(branch.x / self.vae.config.scaling_factor).sample
        img = ((img[0].permute(1, 2, 0).float().cpu().numpy() + 1.0) * 127.5)
        return np.clip(np.round(img), 0, 255).astype(np.uint8)

    # --- inversion --------------------------------------------------------------------

    def _predict_noise(self, x, t):
        torch = self._torch
        with torch.no_grad():
            return self.unet(x, t, encoder_hidden_states=self._empty_emb).sample

    def _posterior(self, x, eps, t, t_prev):
        """DDPM (eta=1) posterior mean and sigma for stepping t -> t_prev."""
        torch = self._torch
        a_t = self._alphas[t]
        a_prev = self._alphas[t_prev] if t_prev >= 0 else torch.tensor(
            1.0, device=self.device)
        x0 = (x - (1 - a_t).sqrt() * eps) / a_t.sqrt()
        var = (1 - a_prev) / (1 - a_t) * (1 - a_t / a_prev)
        sigma = var.sqrt()
        direction = (1 - a_prev - var).clamp(min=0).sqrt() * eps
        return a_prev.sqrt() * x0 + direction, sigma

    def invert(self, image: np.ndarray) -> _Inversion:
        torch = self._torch
        image = self.prepare_image(image)
        w0 = self._encode(image)
        gen = torch.Generator(device="cpu").manual_seed(
            self.seed ^ int(np.uint32(np.frombuffer(image.tobytes()[:4].ljust(4, b"\0"),
                                                    dtype=np.uint32)[0])))
        # independent noisy latents around w0, one per scheduler timestep
        xts = []
        for t in self._timesteps:
            a_t = self._alphas[t]
            noise = torch.randn(w0.shape, generator=gen).to(self.device)
            xts.append(a_t.sqrt() * w0 + (1 - a_t).sqrt() * noise)
        xts.append(w0)
        # per-step residuals that reproduce the recorded trajectory
        zs = []
        for i, t in enumerate(self._timesteps):
            t_prev = self._timesteps[i + 1] if i + 1 < len(self._timesteps) else -1
            eps = self._predict_noise(xts[i], t)
            mean, sigma = self._posterior(xts[i], eps, int(t), int(t_prev))
            if float(sigma) > 0:
                zs.append((xts[i + 1] - mean) / sigma)
            else:
                zs.append(torch.zeros_like(mean))
        return _Inversion(xts, zs, self._timesteps)

    # --- denoising -----------------------------------------------------------------------

    def begin(self, inversion: _Inversion) -> _Branch:
        return _Branch(inversion.xts[0].clone(), inversion)

    def step(self, branch: _Branch, i: int, editor: FeatureEditor | None = None) -> None:
        timesteps = branch.inversion.timesteps
        t = timesteps[i]
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else -1
        self._editor = editor
        try:
            eps = self._predict_noise(branch.x, t)
        finally:
            self._editor = None
        mean, sigma = self._posterior(branch.x, eps, int(t), int(t_prev))
        branch.x = mean + sigma * branch.inversion.zs[i]

    def latents(self, branch: _Branch) -> np.ndarray:
        return branch.x[0].permute(1, 2, 0).float().cpu().numpy().copy()

    def set_latents(self, branch: _Branch, latent: np.ndarray) -> None:
        torch = self._torch
        x = torch.from_numpy(np.ascontiguousarray(latent, dtype=np.float32))
        branch.x = x.permute(2, 0, 1)[None].to(device=branch.x.device,
                                               dtype=branch.x.dtype)
