"""Domain data model: feature maps, masks, correspondences, flows, configs.

Conventions used throughout the package:

* Pixel grids are row-major, y-major then x.  The linear index of pixel
  (x, y) on an h x w grid is ``y * w + x``.
* Feature values are 32-bit floats end to end; metric and matching math is
  carried out in float64 internally.
* All types are immutable after construction (their arrays are marked
  read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .errors import (
    ChannelMismatch,
    InvalidConfig,
    InvariantViolation,
    NonFiniteData,
)

#: Sentinel for "this pixel has no match" in CorrespondenceMap entries.
UNMATCHED = -1


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """Dense h x w x c feature tensor tagged with its denoising identity.

    ``timestep``/``layer`` identify where in a denoising run the tensor was
    taken; both may be None for tensors outside any run.  Tags are carried by
    filenames and protocol fields, not by the tensor file format itself.
    """

    data: np.ndarray
    timestep: int | None = None
    layer: int | None = None
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise InvariantViolation(f"feature map must be h x w x c, got shape {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        object.__setattr__(self, "data", _readonly(arr))
        if self.validate:
            if not np.isfinite(arr).all():
                raise NonFiniteData("feature map contains NaN or Inf")
            if self.timestep is not None and self.timestep < 1:
                raise InvariantViolation(f"timestep must be >= 1, got {self.timestep}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def flat(self) -> np.ndarray:
        """View of the data as (h*w, c), one row per pixel in linear order."""
        return self.data.reshape(-1, self.data.shape[2])


@dataclass(frozen=True)
class ObjectMask:
    """Binary h x w mask selecting an object's pixels."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise InvariantViolation(f"mask must be h x w, got shape {arr.shape}")
        object.__setattr__(self, "bits", _readonly(arr.astype(bool)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()


@dataclass(frozen=True)
class CorrespondenceMap:
    """Per-target-pixel matched reference linear index, or UNMATCHED (-1)."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries)
        if arr.ndim != 2:
            raise InvariantViolation(f"correspondence map must be h x w, got shape {arr.shape}")
        arr = arr.astype(np.int64)
        if (arr < UNMATCHED).any():
            raise InvariantViolation("correspondence entries must be >= -1")
        object.__setattr__(self, "entries", _readonly(arr))

    @property
    def height(self) -> int:
        return self.entries.shape[0]

    @property
    def width(self) -> int:
        return self.entries.shape[1]

    def matched(self) -> np.ndarray:
        """Boolean h x w array, True where a match exists."""
        return self.entries != UNMATCHED

    def consistent_with_mask(self, mask: ObjectMask) -> bool:
        """Check the mask law: matched exactly where the target mask is set."""
        return bool(np.array_equal(self.matched(), mask.bits))


@dataclass(frozen=True)
class FlowMap:
    """Per-pixel (dx, dy) displacement with a validity mask."""

    displacement: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        disp = np.asarray(self.displacement, dtype=np.float32)
        valid = np.asarray(self.validity).astype(bool)
        if disp.ndim != 3 or disp.shape[2] != 2:
            raise InvariantViolation(f"displacement must be h x w x 2, got shape {disp.shape}")
        if valid.shape != disp.shape[:2]:
            raise InvariantViolation("validity shape must match displacement grid")
        if not np.isfinite(disp[valid]).all():
            raise NonFiniteData("displacement not finite on valid pixels")
        object.__setattr__(self, "displacement", _readonly(disp))
        object.__setattr__(self, "validity", _readonly(valid))

    @property
    def height(self) -> int:
        return self.displacement.shape[0]

    @property
    def width(self) -> int:
        return self.displacement.shape[1]


@dataclass(frozen=True)
class SessionConfig:
    """Activation ranges for matching/injection, AdaIN, and the flow readout.

    Timestep ranges are inclusive [lo, hi] on the 1..total_steps denoising
    index.  Layer ids are opaque integers chosen by the client.
    """

    total_steps: int = 100
    inject_t_range: tuple[int, int] = (42, 100)
    inject_layers: frozenset[int] = frozenset({2, 3})
    adain_t_range: tuple[int, int] = (82, 100)
    readout_t: int = 92
    readout_layer: int = 2
    epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "inject_t_range", tuple(self.inject_t_range))
        object.__setattr__(self, "adain_t_range", tuple(self.adain_t_range))
        object.__setattr__(self, "inject_layers", frozenset(int(l) for l in self.inject_layers))

    def validate(self) -> "SessionConfig":
        if self.total_steps < 1:
            raise InvalidConfig(f"total_steps must be >= 1, got {self.total_steps}")
        for name, (lo, hi) in (("inject_t_range", self.inject_t_range),
                               ("adain_t_range", self.adain_t_range)):
            if lo > hi:
                raise InvalidConfig(f"{name} has lo > hi: [{lo}, {hi}]")
            if lo < 1 or hi > self.total_steps:
                raise InvalidConfig(
                    f"{name} [{lo}, {hi}] outside [1, {self.total_steps}]")
        if not (1 <= self.readout_t <= self.total_steps):
            raise InvalidConfig(f"readout_t {self.readout_t} outside [1, {self.total_steps}]")
        if self.epsilon <= 0:
            raise InvalidConfig(f"epsilon must be > 0, got {self.epsilon}")
        return self

    def inject_active(self, t: int, layer: int) -> bool:
        lo, hi = self.inject_t_range
        return lo <= t <= hi and layer in self.inject_layers

    def adain_active(self, t: int) -> bool:
        lo, hi = self.adain_t_range
        return lo <= t <= hi


@dataclass(frozen=True)
class Histogram:
    """Binned color frequencies over a fixed per-channel binning.

    ``bins`` may hold raw counts or normalized frequencies; use
    :meth:`normalize` to obtain the normalized form (sums to 1 when
    non-empty).  ``bins_per_channel`` and ``colorspace`` describe the layout
    so comparisons can reject mismatched histograms.
    """

    bins: np.ndarray
    bins_per_channel: int
    colorspace: str = "rgb"

    def __post_init__(self):
        arr = np.asarray(self.bins, dtype=np.float64)
        if (arr < 0).any():
            raise InvariantViolation("histogram bins must be non-negative")
        object.__setattr__(self, "bins", _readonly(arr))

    @property
    def layout(self) -> tuple[int, str, tuple[int, ...]]:
        return (self.bins_per_channel, self.colorspace, self.bins.shape)

    def total(self) -> float:
        return float(self.bins.sum())

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return abs(self.total() - 1.0) <= tol

    def normalize(self) -> "Histogram":
        mass = self.total()
        if mass <= 0:
            raise InvariantViolation("cannot normalize an empty histogram")
        return Histogram(self.bins / mass, self.bins_per_channel, self.colorspace)


@dataclass(frozen=True)
class KeypointSet:
    """Detected or ground-truth keypoints with visibility and OKS constants.

    Visibility follows the labeled-keypoint convention: v > 0 means the point
    is labeled and participates in OKS.
    """

    points: np.ndarray
    visibility: np.ndarray
    object_scale: float
    kappas: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        vis = np.asarray(self.visibility, dtype=np.int64).reshape(-1)
        kap = np.asarray(self.kappas, dtype=np.float64).reshape(-1)
        if not (len(pts) == len(vis) == len(kap)):
            raise InvariantViolation(
                f"points/visibility/kappas lengths differ: {len(pts)}/{len(vis)}/{len(kap)}")
        if self.object_scale <= 0:
            raise InvariantViolation(f"object scale must be > 0, got {self.object_scale}")
        if (kap <= 0).any():
            raise InvariantViolation("all kappas must be > 0")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "visibility", _readonly(vis))
        object.__setattr__(self, "kappas", _readonly(kap))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth values."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise InvariantViolation(f"depth map must be h x w, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteData("depth map contains NaN or Inf")
        object.__setattr__(self, "values", _readonly(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length embedding produced by an external encoder."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if arr.size == 0 or not np.isfinite(arr).all() or float(np.linalg.norm(arr)) == 0.0:
            raise InvariantViolation("embedding must be finite with non-zero norm")
        object.__setattr__(self, "values", _readonly(arr))

    def __len__(self) -> int:
        return len(self.values)


def validate_pair(a: FeatureMap, b: FeatureMap) -> None:
    """Check two feature maps can be matched: equal channels, finite data.

    Spatial dims may differ; matching runs over flattened masked index sets.
    Raises ChannelMismatch or NonFiniteData.
    """
    if a.channels != b.channels:
        raise ChannelMismatch(f"channel counts differ: {a.channels} vs {b.channels}")
    for name, fm in (("first", a), ("second", b)):
        if not np.isfinite(fm.data).all():
            raise NonFiniteData(f"{name} feature map contains NaN or Inf")


def linear_to_xy(index: np.ndarray | int, width: int) -> tuple:
    """Split row-major linear indices into (x, y) coordinates."""
    return index % width, index // width
