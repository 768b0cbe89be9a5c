"""Orchestration: two (or more) denoising branches wired through the engine.

Per step: every reference branch runs first, streaming its tapped features
to the engine (PUT_REFERENCE, once per branch step); the output branch then
runs with an editor that asks the engine to REARRANGE its features at
active (timestep, layer) pairs and injects the reply; finally, in the
configured range, masked AdaIN is applied to the output-branch latent with
each reference branch's latent as style.  After the loop the recorded
dense-correspondence flow is read back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorfile
from .backend import DenoiseBackend
from .config import HookConfig, engine_config_payload, expand_layer_ids
from .masks import resize_mask
from .wireclient import EngineSession

log = logging.getLogger(__name__)


@dataclass
class TransferObject:
    """One reference image with its object mask and the target region it paints.

    Masks are binary arrays at image resolution; the hook resamples them to
    each tap layer's and the latent's resolution by nearest neighbor.
    """

    ref_image: np.ndarray
    ref_mask: np.ndarray
    target_mask: np.ndarray


@dataclass
class TransferResult:
    image: np.ndarray
    flow_displacement: np.ndarray | None = None
    flow_validity: np.ndarray | None = None
    latent_trace: list | None = None
    dumps: list[Path] = field(default_factory=list)


def reconstruct(backend: DenoiseBackend, image: np.ndarray,
                record_latents: bool = False) -> TransferResult:
    """Invert and denoise with no modification: the plain reconstruction."""
    branch = backend.begin(backend.invert(image))
    trace = [] if record_latents else None
    for i in range(backend.steps):
        backend.step(branch, i)
        if trace is not None:
            trace.append(backend.latents(branch))
    return TransferResult(image=backend.decode(branch), latent_trace=trace)


def _dump(path_dir: Path, name: str, data: np.ndarray, dumps: list[Path]) -> None:
    path = path_dir / name
    tensorfile.write(path, np.ascontiguousarray(data, dtype=np.float32)
                     if data.dtype != np.uint8 else data)
    dumps.append(path)


def run_transfer(backend: DenoiseBackend, target_image: np.ndarray,
                 objects: list[TransferObject], config: HookConfig,
                 dump_dir=None, record_latents: bool = False) -> TransferResult:
    """Full transfer: one output branch, one reference branch per object.

    With ``dump_dir`` set, the features entering each active match (output
    side pre-injection, reference side as streamed) and the resampled masks
    are saved as tensor files, so offline matching can replay any step.
    """
    modules = backend.modules_per_block()
    layer_ids = expand_layer_ids(config, modules)
    dumps: list[Path] = []
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)

    target_image = backend.prepare_image(target_image)
    branch_out = backend.begin(backend.invert(target_image))
    ref_branches = [backend.begin(backend.invert(backend.prepare_image(o.ref_image)))
                    for o in objects]

    # masks resampled once per tap layer and for the latent grid
    target_masks_at = {
        lid: [resize_mask(o.target_mask, backend.feature_hw(lid)) for o in objects]
        for lid in layer_ids}
    ref_masks_at = {
        lid: [resize_mask(o.ref_mask, backend.feature_hw(lid)) for o in objects]
        for lid in layer_ids}
    latent_hw = backend.latent_hw()
    target_masks_latent = [resize_mask(o.target_mask, latent_hw) for o in objects]
    ref_masks_latent = [resize_mask(o.ref_mask, latent_hw) for o in objects]
    if dump_dir is not None:
        for lid in layer_ids:
            for obj in range(len(objects)):
                _dump(dump_dir, f"mask_target{obj}_l{lid:02d}.eft",
                      target_masks_at[lid][obj].astype(np.uint8), dumps)
                _dump(dump_dir, f"mask_ref{obj}_l{lid:02d}.eft",
                      ref_masks_at[lid][obj].astype(np.uint8), dumps)

    session = EngineSession(config.engine_host, config.engine_port,
                            engine_config_payload(config, modules))
    trace = [] if record_latents else None
    try:
        for i in range(backend.steps):
            t = i + 1
            active = bool(objects) and config.inject_active(t)

            for obj_idx, branch in enumerate(ref_branches):
                if active:
                    def stream(lid, feats, obj_idx=obj_idx):
                        if lid in target_masks_at:
                            session.put_reference(obj_idx, t, lid, feats,
                                                  ref_masks_at[lid][obj_idx].astype(np.uint8))
                            if dump_dir is not None:
                                _dump(dump_dir, f"ref{obj_idx}_t{t:03d}_l{lid:02d}.eft",
                                      feats, dumps)
                        return None
                    backend.step(branch, i, stream)
                else:
                    backend.step(branch, i)

            if active:
                def edit(lid, feats):
                    if lid not in target_masks_at:
                        return None
                    if dump_dir is not None:
                        _dump(dump_dir, f"out_t{t:03d}_l{lid:02d}.eft", feats, dumps)
                    return session.rearrange(
                        t, lid, feats,
                        [m.astype(np.uint8) for m in target_masks_at[lid]])
                backend.step(branch_out, i, edit)
            else:
                backend.step(branch_out, i)

            if objects and config.adain_active(t):
                content = backend.latents(branch_out)
                for obj_idx, branch in enumerate(ref_branches):
                    content = session.adain(
                        t, content, backend.latents(branch),
                        target_masks_latent[obj_idx].astype(np.uint8),
                        ref_masks_latent[obj_idx].astype(np.uint8))
                backend.set_latents(branch_out, content)

            if trace is not None:
                trace.append(backend.latents(branch_out))

        flow_disp = flow_valid = None
        if (objects and config.inject_active(config.readout_t)
                and config.readout_block in config.tap_layers):
            flow_disp, flow_valid = session.readout_flow()
    finally:
        session.close()

    return TransferResult(image=backend.decode(branch_out),
                          flow_displacement=flow_disp, flow_validity=flow_valid,
                          latent_trace=trace, dumps=dumps)


def dump_features(backend: DenoiseBackend, image: np.ndarray, config: HookConfig,
                  out_dir, t_values=None) -> list[Path]:
    """Plain-run tap dumps per (timestep, layer) for offline experiments.

    ``t_values`` limits which engine timesteps are saved (default: all).
    An empty tap-layer set writes nothing and succeeds.
    """
    modules = backend.modules_per_block()
    layer_ids = set(expand_layer_ids(config, modules)) if config.tap_layers else set()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = None if t_values is None else {int(t) for t in t_values}
    written: list[Path] = []
    branch = backend.begin(backend.invert(backend.prepare_image(image)))
    for i in range(backend.steps):
        t = i + 1
        if layer_ids and (wanted is None or t in wanted):
            def save(lid, feats):
                if lid in layer_ids:
                    path = out_dir / f"feat_t{t:03d}_l{lid:02d}.eft"
                    tensorfile.write(path, np.ascontiguousarray(feats, dtype=np.float32))
                    written.append(path)
                return None
            backend.step(branch, i, save)
        else:
            backend.step(branch, i)
    return written
