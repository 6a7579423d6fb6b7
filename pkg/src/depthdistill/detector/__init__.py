from .decode import (
    Detection,
    angle_to_bin,
    bin_centers,
    confidence,
    decode,
    decode_orientation,
    nms2d,
)
from .model import (
    HEAD_NAMES,
    BackboneFeatures,
    Detector,
    DetectorConfig,
    FusionModule,
    HeadOutputs,
    fuse_features,
)

__all__ = [
    "HEAD_NAMES",
    "BackboneFeatures",
    "Detection",
    "Detector",
    "DetectorConfig",
    "FusionModule",
    "HeadOutputs",
    "angle_to_bin",
    "bin_centers",
    "confidence",
    "decode",
    "decode_orientation",
    "fuse_features",
    "nms2d",
]
