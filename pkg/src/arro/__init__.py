"""Calibration-free visual transform for robot camera streams.

Segments the gripper and task-relevant objects on the first frame,
propagates their masks over time with occlusion tolerance, and
recomposes the retained regions onto a deterministic virtual
background. Usable as a library, a batch dataset transformer and a
real-time streaming service.
"""

__version__ = "0.1.0"

from .core import (
    BoundingBox,
    Frame,
    Keypoint,
    Mask,
    RleMask,
    bbox_of,
    centroid,
    connected_components,
    decode_rle,
    encode_rle,
    iou,
    resize_frame,
    union,
)

__all__ = [
    "__version__",
    "Frame",
    "Mask",
    "BoundingBox",
    "Keypoint",
    "RleMask",
    "union",
    "iou",
    "centroid",
    "bbox_of",
    "connected_components",
    "encode_rle",
    "decode_rle",
    "resize_frame",
]
