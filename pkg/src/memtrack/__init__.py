"""Training-free temporal-memory and re-identification engine for multi-instance video tracking."""

from .core import (
    BBox,
    BinaryMask,
    CandidatePrediction,
    FeatureMap,
    FrameMeta,
    PredictionRecord,
    bbox_iou,
    mask_iou,
    masked_mean_pool,
    tight_bbox,
)
from .tracker import EngineConfig, TrackingEngine

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BinaryMask",
    "CandidatePrediction",
    "EngineConfig",
    "FeatureMap",
    "FrameMeta",
    "PredictionRecord",
    "TrackingEngine",
    "bbox_iou",
    "mask_iou",
    "masked_mean_pool",
    "tight_bbox",
    "__version__",
]
