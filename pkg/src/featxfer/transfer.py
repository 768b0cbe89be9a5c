"""Feature rearrangement, masked injection, masked AdaIN, per-step orchestration.

The per-step pipeline is: match each object's masked target pixels against
its reference, gather the reference rows into the target layout, then blend
all objects into the target in one combined injection.  Pixels outside every
target mask pass through bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureMap, ObjectMask, CorrespondenceMap, SessionConfig, UNMATCHED
from .errors import (
    ChannelMismatch,
    DimensionMismatch,
    EmptyMask,
    IndexOutOfRange,
    OverlappingTargetMasks,
)
from .matching import PreparedReference, match_prepared, prepare_reference


@dataclass(frozen=True)
class ObjectPair:
    """One reference image's feature map with its mask and the region of the
    target it paints."""

    reference: FeatureMap
    m_ref: ObjectMask
    m_target: ObjectMask


def rearrange(reference: FeatureMap, corr: CorrespondenceMap,
              target_dims: tuple[int, int]) -> FeatureMap:
    """Gather reference rows into the target layout along a correspondence.

    out(q) = reference(p) for matched q; unmatched pixels are zero-filled
    (they are discarded by the injection mask blend).
    """
    h, w = target_dims
    if corr.entries.shape != (h, w):
        raise DimensionMismatch(
            f"correspondence grid {corr.entries.shape} does not match target dims {(h, w)}")
    entries = corr.entries.reshape(-1)
    matched = entries != UNMATCHED
    limit = reference.height * reference.width
    if matched.any() and int(entries[matched].max()) >= limit:
        raise IndexOutOfRange(
            f"matched index {int(entries[matched].max())} outside reference grid of {limit} pixels")

    out = np.zeros((h * w, reference.channels), dtype=np.float32)
    out[matched] = reference.flat()[entries[matched]]
    return FeatureMap(out.reshape(h, w, reference.channels),
                      reference.timestep, reference.layer, validate=False)


def inject(rearranged: FeatureMap, target: FeatureMap,
           m_target: ObjectMask) -> FeatureMap:
    """Masked blend: rearranged features inside the mask, target outside.

    The complement of the mask is returned bit-identical to the target.
    """
    if rearranged.data.shape != target.data.shape:
        raise DimensionMismatch(
            f"shapes differ: {rearranged.data.shape} vs {target.data.shape}")
    if (m_target.height, m_target.width) != (target.height, target.width):
        raise DimensionMismatch(
            f"mask {m_target.height}x{m_target.width} does not fit "
            f"target {target.height}x{target.width}")
    out = np.where(m_target.bits[..., None], rearranged.data, target.data)
    return FeatureMap(out, target.timestep, target.layer, validate=False)


def adain_masked(content: FeatureMap, style: FeatureMap,
                 m_content: ObjectMask, m_style: ObjectMask,
                 epsilon: float = 1e-8) -> FeatureMap:
    """Transfer per-channel mean/std statistics from style to content pixels.

    Statistics are population moments over each side's masked pixels only;
    content pixels outside ``m_content`` are unchanged.  A near-constant
    content region is guarded by ``epsilon`` in the denominator, collapsing
    the masked region to the style mean.
    """
    if content.channels != style.channels:
        raise ChannelMismatch(
            f"channel counts differ: {content.channels} vs {style.channels}")
    if (m_content.height, m_content.width) != (content.height, content.width):
        raise DimensionMismatch("content mask does not fit content map")
    if (m_style.height, m_style.width) != (style.height, style.width):
        raise DimensionMismatch("style mask does not fit style map")
    if m_content.is_empty():
        raise EmptyMask("content mask selects no pixels")
    if m_style.is_empty():
        raise EmptyMask("style mask selects no pixels")

    c_rows = content.data[m_content.bits].astype(np.float64)
    s_rows = style.data[m_style.bits].astype(np.float64)
    mu_c = c_rows.mean(axis=0)
    sigma_c = np.sqrt(((c_rows - mu_c) ** 2).mean(axis=0))
    mu_s = s_rows.mean(axis=0)
    sigma_s = np.sqrt(((s_rows - mu_s) ** 2).mean(axis=0))

    shifted = (c_rows - mu_c) / np.maximum(sigma_c, epsilon) * sigma_s + mu_s
    out = np.array(content.data)
    out[m_content.bits] = shifted.astype(np.float32)
    return FeatureMap(out, content.timestep, content.layer, validate=False)


def _check_disjoint(masks: list[ObjectMask], target: FeatureMap) -> None:
    cover = np.zeros((target.height, target.width), dtype=np.int32)
    for m in masks:
        if (m.height, m.width) != (target.height, target.width):
            raise DimensionMismatch(
                f"target mask {m.height}x{m.width} does not fit "
                f"target {target.height}x{target.width}")
        cover += m.bits
    if (cover > 1).any():
        raise OverlappingTargetMasks("object target masks overlap")


def transfer_step_with_correspondences(
        target: FeatureMap,
        objects: list[ObjectPair],
        config: SessionConfig,
        t: int,
        layer: int,
        prepared: list[PreparedReference] | None = None,
) -> tuple[FeatureMap, list[CorrespondenceMap] | None]:
    """transfer_step that also returns the per-object correspondences.

    ``prepared`` may carry pre-normalized references (one per object) to skip
    re-normalization; results are identical either way.  Correspondences are
    None when (t, layer) is inactive.
    """
    if not config.inject_active(t, layer):
        return target, None
    _check_disjoint([o.m_target for o in objects], target)

    out = np.array(target.data)
    corrs: list[CorrespondenceMap] = []
    for i, obj in enumerate(objects):
        if obj.reference.channels != target.channels:
            raise ChannelMismatch(
                f"object {i} reference has {obj.reference.channels} channels, "
                f"target has {target.channels}")
        prep = prepared[i] if prepared is not None else prepare_reference(
            obj.reference, obj.m_ref, config.epsilon)
        corr = match_prepared(target, obj.m_target, prep, config.epsilon)
        corrs.append(corr)
        gathered = rearrange(obj.reference, corr, (target.height, target.width))
        out[obj.m_target.bits] = gathered.data[obj.m_target.bits]
    return FeatureMap(out, t, layer, validate=False), corrs


def transfer_step(target: FeatureMap, objects: list[ObjectPair],
                  config: SessionConfig, t: int, layer: int) -> FeatureMap:
    """One per-step transfer: match, rearrange, and inject every object.

    Outside the configured (timestep, layer) activation set this is the
    identity on the target.  Object target masks must be pairwise disjoint;
    each object is matched against its own reference and masks, and the
    combined injection keeps the target wherever no mask is set.
    """
    out, _ = transfer_step_with_correspondences(target, objects, config, t, layer)
    return out
