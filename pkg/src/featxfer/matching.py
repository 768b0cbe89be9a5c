"""Masked dense matching by argmax cosine similarity, plus its naive oracle.

The fast path normalizes both masked feature sets once and reduces the
argmax to blocked matrix products over float64 rows.  Equal-similarity ties
break toward the lowest reference linear index, so the result does not
depend on how the reduction is parallelized.  ``brute_force_match`` is the
definitional double loop used to verify the fast path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import UNMATCHED, CorrespondenceMap, FeatureMap, FlowMap, ObjectMask, validate_pair
from .errors import (
    ChannelMismatch,
    DimensionMismatch,
    EmptyReferenceMask,
    IndexOutOfRange,
    LengthMismatch,
)

# Query rows per similarity block; bounds peak memory at ~block * h*w * 8 bytes.
_QUERY_BLOCK = 1024


def cosine_similarity(a, b, epsilon: float = 1e-8) -> float:
    """Cosine of the angle between two equal-length vectors, in [-1, 1].

    Zero-length vectors are guarded by ``epsilon`` in the denominator instead
    of raising, so degenerate feature rows compare as ~0 to everything.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise LengthMismatch(f"vector lengths differ: {a.size} vs {b.size}")
    denom = max(float(np.linalg.norm(a)), epsilon) * max(float(np.linalg.norm(b)), epsilon)
    return float(np.clip(float(a @ b) / denom, -1.0, 1.0))


def _normalize_rows(rows: np.ndarray, epsilon: float) -> np.ndarray:
    rows = rows.astype(np.float64)
    norms = np.maximum(np.linalg.norm(rows, axis=1), epsilon)
    return rows / norms[:, None]


def _check_mask_dims(fm: FeatureMap, mask: ObjectMask, name: str) -> None:
    if (fm.height, fm.width) != (mask.height, mask.width):
        raise DimensionMismatch(
            f"{name} mask {mask.height}x{mask.width} does not fit "
            f"feature map {fm.height}x{fm.width}")


@dataclass(frozen=True)
class PreparedReference:
    """Reference side of a match, normalized once and reusable across calls.

    ``candidates`` are the masked reference linear indices in increasing
    order; ``rows`` are the corresponding unit feature rows (float64).
    """

    candidates: np.ndarray
    rows: np.ndarray
    height: int
    width: int
    channels: int


def prepare_reference(reference: FeatureMap, m_ref: ObjectMask,
                      epsilon: float = 1e-8) -> PreparedReference:
    """Pre-normalize the masked reference rows for repeated matching."""
    _check_mask_dims(reference, m_ref, "reference")
    candidates = np.flatnonzero(m_ref.bits.reshape(-1))
    if candidates.size == 0:
        raise EmptyReferenceMask("reference mask selects no pixels")
    rows = _normalize_rows(reference.flat()[candidates], epsilon)
    return PreparedReference(candidates, rows, reference.height,
                             reference.width, reference.channels)


def match_prepared(target: FeatureMap, m_target: ObjectMask,
                   prepared: PreparedReference,
                   epsilon: float = 1e-8) -> CorrespondenceMap:
    """Match masked target pixels against a prepared reference."""
    if target.channels != prepared.channels:
        raise ChannelMismatch(
            f"channel counts differ: {target.channels} vs {prepared.channels}")
    _check_mask_dims(target, m_target, "target")

    entries = np.full((target.height, target.width), UNMATCHED, dtype=np.int64)
    queries = np.flatnonzero(m_target.bits.reshape(-1))
    if queries.size == 0:
        return CorrespondenceMap(entries)

    t_rows = _normalize_rows(target.flat()[queries], epsilon)
    best = np.empty(queries.size, dtype=np.int64)
    for start in range(0, queries.size, _QUERY_BLOCK):
        block = t_rows[start:start + _QUERY_BLOCK]
        sims = block @ prepared.rows.T
        np.clip(sims, -1.0, 1.0, out=sims)
        # argmax returns the first maximum: lowest candidate index wins ties.
        best[start:start + block.shape[0]] = np.argmax(sims, axis=1)
    entries.reshape(-1)[queries] = prepared.candidates[best]
    return CorrespondenceMap(entries)


def masked_cosine_match(target: FeatureMap, reference: FeatureMap,
                        m_target: ObjectMask, m_ref: ObjectMask,
                        epsilon: float = 1e-8) -> CorrespondenceMap:
    """Argmax-cosine match of masked target pixels to masked reference pixels.

    For every target pixel q with ``m_target`` set, the entry holds the
    reference linear index p maximizing cosine similarity between the two
    feature rows, restricted to p with ``m_ref`` set.  Pixels outside
    ``m_target`` are UNMATCHED.  Ties break to the lowest p.
    """
    validate_pair(target, reference)
    return match_prepared(target, m_target, prepare_reference(reference, m_ref, epsilon),
                          epsilon)


def brute_force_match(target: FeatureMap, reference: FeatureMap,
                      m_target: ObjectMask, m_ref: ObjectMask,
                      epsilon: float = 1e-8) -> CorrespondenceMap:
    """Naive O(|queries| * |candidates| * c) oracle for masked_cosine_match.

    Same contract and tie-break as the fast path, implemented as the
    definitional double loop over masked pixels.
    """
    validate_pair(target, reference)
    _check_mask_dims(target, m_target, "target")
    _check_mask_dims(reference, m_ref, "reference")
    candidates = np.flatnonzero(m_ref.bits.reshape(-1))
    if candidates.size == 0:
        raise EmptyReferenceMask("reference mask selects no pixels")

    t_flat = target.flat()
    r_flat = reference.flat()
    entries = np.full((target.height, target.width), UNMATCHED, dtype=np.int64)
    flat_entries = entries.reshape(-1)
    for q in np.flatnonzero(m_target.bits.reshape(-1)):
        best_p = -1
        best_sim = -np.inf
        for p in candidates:
            sim = cosine_similarity(t_flat[q], r_flat[p], epsilon)
            if sim > best_sim:
                best_sim = sim
                best_p = int(p)
        flat_entries[q] = best_p
    return CorrespondenceMap(entries)


def correspondence_to_flow(corr: CorrespondenceMap, ref_width: int,
                           ref_height: int | None = None) -> FlowMap:
    """Derive the displacement field (x_p - x_q, y_p - y_q) from a match.

    ``ref_width`` fixes the reference grid geometry for splitting linear
    indices into coordinates; pass ``ref_height`` to also bound-check the
    matched indices.  Unmatched pixels get zero displacement and unset
    validity.
    """
    if ref_width <= 0:
        raise IndexOutOfRange(f"reference width must be > 0, got {ref_width}")
    entries = corr.entries
    matched = entries != UNMATCHED
    if ref_height is not None and matched.any():
        limit = ref_width * ref_height
        if int(entries[matched].max()) >= limit:
            raise IndexOutOfRange(
                f"matched index {int(entries[matched].max())} outside "
                f"{ref_height}x{ref_width} reference grid")

    h, w = entries.shape
    xq, yq = np.meshgrid(np.arange(w), np.arange(h))
    xp = entries % ref_width
    yp = entries // ref_width
    disp = np.zeros((h, w, 2), dtype=np.float32)
    disp[..., 0] = np.where(matched, xp - xq, 0)
    disp[..., 1] = np.where(matched, yp - yq, 0)
    return FlowMap(disp, matched)
