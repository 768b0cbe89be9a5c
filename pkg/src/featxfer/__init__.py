"""Training-free appearance transfer primitives over serialized feature maps.

Masked dense matching by argmax cosine similarity, feature rearrangement and
masked injection, masked AdaIN, an evaluation metric suite, bit-exact tensor
file formats, and a streaming service for use inside an external denoising
loop.
"""

from .core import (
    UNMATCHED,
    CorrespondenceMap,
    DepthMap,
    EmbeddingVector,
    FeatureMap,
    FlowMap,
    Histogram,
    KeypointSet,
    ObjectMask,
    SessionConfig,
    validate_pair,
)
from .matching import (
    brute_force_match,
    correspondence_to_flow,
    cosine_similarity,
    masked_cosine_match,
)
from .transfer import ObjectPair, adain_masked, inject, rearrange, transfer_step
from . import errors, metrics, tensorio

__all__ = [
    "UNMATCHED",
    "CorrespondenceMap",
    "DepthMap",
    "EmbeddingVector",
    "FeatureMap",
    "FlowMap",
    "Histogram",
    "KeypointSet",
    "ObjectMask",
    "ObjectPair",
    "SessionConfig",
    "adain_masked",
    "brute_force_match",
    "correspondence_to_flow",
    "cosine_similarity",
    "errors",
    "inject",
    "masked_cosine_match",
    "metrics",
    "rearrange",
    "tensorio",
    "transfer_step",
    "validate_pair",
]

__version__ = "0.1.0"
