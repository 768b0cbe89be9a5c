"""Quantitative evaluation suite: appearance, structure, keypoint, and flow metrics.

Appearance: joint color histograms compared by Bhattacharyya distance, and
mean pairwise cosine of externally produced embeddings (0-100 scale).
Structure: object-level depth RMSE and mask mean-IoU, plus keypoint AP over
OKS thresholds.  Dense correspondence: masked L1 distance between flow maps.

All scores are plain floats; dataset-level aggregation (mean over samples)
lives in the CLI evaluation battery.
"""

from __future__ import annotations

import numpy as np

from .core import DepthMap, EmbeddingVector, FlowMap, Histogram, KeypointSet, ObjectMask
from .errors import (
    DimensionMismatch,
    EmptyList,
    EmptyMask,
    EmptyUnion,
    EmptyValidity,
    InvariantViolation,
    LayoutMismatch,
    LengthMismatch,
    NoVisibleKeypoints,
)

#: OKS thresholds for average precision: 0.50, 0.55, ..., 0.95.
DEFAULT_OKS_THRESHOLDS = tuple(t / 100 for t in range(50, 100, 5))


def color_histogram(image: np.ndarray, mask: ObjectMask,
                    bins_per_channel: int = 8) -> Histogram:
    """Joint 3-D color histogram of the masked pixels, normalized to sum 1.

    ``image`` is h x w x 3 with values in [0, 255]; bin edges are uniform
    over [0, 256) per channel.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionMismatch(f"image must be h x w x 3, got shape {image.shape}")
    if image.shape[:2] != mask.bits.shape:
        raise DimensionMismatch(
            f"mask {mask.bits.shape} does not fit image {image.shape[:2]}")
    if bins_per_channel < 1:
        raise InvariantViolation(f"bins_per_channel must be >= 1, got {bins_per_channel}")
    if mask.is_empty():
        raise EmptyMask("histogram mask selects no pixels")

    pixels = image[mask.bits].astype(np.float64)
    idx = np.clip((pixels * bins_per_channel / 256.0).astype(np.int64),
                  0, bins_per_channel - 1)
    flat = (idx[:, 0] * bins_per_channel + idx[:, 1]) * bins_per_channel + idx[:, 2]
    counts = np.bincount(flat, minlength=bins_per_channel ** 3).astype(np.float64)
    counts /= counts.sum()
    shape = (bins_per_channel,) * 3
    return Histogram(counts.reshape(shape), bins_per_channel)


def bhattacharyya(h1: Histogram, h2: Histogram) -> float:
    """Bhattacharyya distance sqrt(1 - sum(sqrt(p*q))) between normalized
    histograms, clamped to [0, 1]."""
    if h1.layout != h2.layout:
        raise LayoutMismatch(f"histogram layouts differ: {h1.layout} vs {h2.layout}")
    for h in (h1, h2):
        if not h.is_normalized(tol=1e-6):
            raise InvariantViolation("bhattacharyya requires normalized histograms")
    bc = float(np.sqrt(h1.bins * h2.bins).sum())
    return float(np.clip(np.sqrt(max(0.0, 1.0 - bc)), 0.0, 1.0))


def clip_appearance_score(gt_embeddings: list[EmbeddingVector],
                          out_embeddings: list[EmbeddingVector]) -> float:
    """Mean pairwise cosine similarity of embedding pairs, on a 0-100 scale."""
    if len(gt_embeddings) != len(out_embeddings):
        raise LengthMismatch(
            f"embedding list lengths differ: {len(gt_embeddings)} vs {len(out_embeddings)}")
    if not gt_embeddings:
        raise EmptyList("no embedding pairs")
    sims = []
    for g, o in zip(gt_embeddings, out_embeddings):
        if len(g) != len(o):
            raise LengthMismatch(f"embedding dims differ: {len(g)} vs {len(o)}")
        cos = float(g.values @ o.values) / (
            float(np.linalg.norm(g.values)) * float(np.linalg.norm(o.values)))
        sims.append(float(np.clip(cos, -1.0, 1.0)))
    return float(np.mean(sims) * 100.0)


def depth_rmse(d_target: DepthMap, d_output: DepthMap, mask: ObjectMask) -> float:
    """Root mean square depth error over the masked pixels."""
    if d_target.values.shape != d_output.values.shape:
        raise DimensionMismatch(
            f"depth shapes differ: {d_target.values.shape} vs {d_output.values.shape}")
    if d_target.values.shape != mask.bits.shape:
        raise DimensionMismatch(
            f"mask {mask.bits.shape} does not fit depth {d_target.values.shape}")
    if mask.is_empty():
        raise EmptyMask("depth mask selects no pixels")
    diff = d_target.values[mask.bits] - d_output.values[mask.bits]
    return float(np.sqrt((diff ** 2).mean()))


def normalize_depth(depth: DepthMap) -> DepthMap:
    """Min-max normalize depth values to [0, 1]; constant maps become zeros.

    Applied by the evaluation battery on ingestion so estimates from
    different depth estimators compare on a common scale.
    """
    lo = float(depth.values.min())
    hi = float(depth.values.max())
    if hi - lo <= 0:
        return DepthMap(np.zeros_like(depth.values))
    return DepthMap((depth.values - lo) / (hi - lo))


def miou(gt_masks: list[ObjectMask], out_masks: list[ObjectMask]) -> float:
    """Mean intersection-over-union over mask pairs, in [0, 1]."""
    if len(gt_masks) != len(out_masks):
        raise LengthMismatch(
            f"mask list lengths differ: {len(gt_masks)} vs {len(out_masks)}")
    if not gt_masks:
        raise EmptyList("no mask pairs")
    ious = []
    for g, o in zip(gt_masks, out_masks):
        if g.bits.shape != o.bits.shape:
            raise DimensionMismatch(
                f"mask shapes differ: {g.bits.shape} vs {o.bits.shape}")
        union = int((g.bits | o.bits).sum())
        if union == 0:
            raise EmptyUnion("mask pair has empty union")
        inter = int((g.bits & o.bits).sum())
        ious.append(inter / union)
    return float(np.mean(ious))


def oks(pred: KeypointSet, gt: KeypointSet) -> float:
    """Object keypoint similarity between detected and ground-truth points.

    Per labeled ground-truth point (v > 0): exp(-d^2 / (2 s^2 kappa^2)) with
    d the Euclidean distance to the prediction, s the ground truth's object
    scale and kappa its per-point constant; averaged over labeled points.
    """
    if len(pred) != len(gt):
        raise LengthMismatch(f"keypoint counts differ: {len(pred)} vs {len(gt)}")
    visible = gt.visibility > 0
    if not visible.any():
        raise NoVisibleKeypoints("ground truth has no labeled keypoints")
    d2 = ((pred.points[visible] - gt.points[visible]) ** 2).sum(axis=1)
    denom = 2.0 * gt.object_scale ** 2 * gt.kappas[visible] ** 2
    with np.errstate(over="ignore"):
        terms = np.exp(-d2 / denom)
    return float(terms.mean())


def keypoint_ap(oks_values: list[float],
                thresholds: tuple[float, ...] = DEFAULT_OKS_THRESHOLDS) -> float:
    """Average precision: mean over thresholds of the fraction of OKS values
    at or above each threshold."""
    if not oks_values:
        raise EmptyList("no OKS values")
    if not thresholds:
        raise EmptyList("no thresholds")
    values = np.asarray(oks_values, dtype=np.float64)
    precisions = [(values >= tau).mean() for tau in thresholds]
    return float(np.mean(precisions))


def flow_l1(pred: FlowMap, gt: FlowMap) -> float:
    """Mean per-pixel L1 flow distance over the ground truth's valid pixels.

    Per valid pixel the residual is |dx_pred - dx_gt| + |dy_pred - dy_gt|;
    the sum is divided by the valid-pixel count.  Dataset-level scores
    average this per-image value over samples.
    """
    if pred.displacement.shape != gt.displacement.shape:
        raise DimensionMismatch(
            f"flow shapes differ: {pred.displacement.shape} vs {gt.displacement.shape}")
    valid = gt.validity
    count = int(valid.sum())
    if count == 0:
        raise EmptyValidity("ground-truth flow has no valid pixels")
    diff = np.abs(pred.displacement[valid].astype(np.float64)
                  - gt.displacement[valid].astype(np.float64))
    return float(diff.sum() / count)
