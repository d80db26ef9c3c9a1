"""Masks, boxes, and feature-grid primitives shared by every pipeline stage.

Masks are kept run-length encoded (row-major scan order, alternating runs
starting with background) and decoded to numpy arrays only at the point of
use. All types here are immutable values; all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class FrameMeta:
    """Position and geometry of one frame in a stream."""

    frame_index: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be non-negative, got {self.frame_index}")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"frame must be at least 1x1, got {self.height}x{self.width}")


@dataclass(frozen=True)
class BinaryMask:
    """Run-length encoded binary mask.

    Runs are row-major scan-order lengths alternating background/foreground;
    the first run counts background pixels and may be zero. All later runs are
    strictly positive and the lengths sum to ``height * width``, which makes
    the encoding canonical: two masks are equal iff their runs are equal.
    """

    height: int
    width: int
    runs: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"mask must be at least 1x1, got {self.height}x{self.width}")
        if not self.runs:
            raise ValueError("runs must not be empty")
        if self.runs[0] < 0 or any(r <= 0 for r in self.runs[1:]):
            raise ValueError(f"non-canonical run lengths: {self.runs[:8]}...")
        total = sum(self.runs)
        if total != self.height * self.width:
            raise ValueError(
                f"run lengths sum to {total}, expected {self.height * self.width}"
            )

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BinaryMask":
        """Encode a 2-D boolean array."""
        arr = np.asarray(array, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        flat = arr.ravel()
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds)
        if flat[0]:
            runs = np.concatenate(([0], runs))
        return cls(arr.shape[0], arr.shape[1], tuple(int(r) for r in runs))

    @classmethod
    def empty(cls, height: int, width: int) -> "BinaryMask":
        return cls(height, width, (height * width,))

    def to_array(self) -> np.ndarray:
        """Decode to a 2-D boolean array; exact inverse of ``from_array``."""
        flags = np.zeros(len(self.runs), dtype=bool)
        flags[1::2] = True
        flat = np.repeat(flags, np.asarray(self.runs, dtype=np.int64))
        return flat.reshape(self.height, self.width)

    @property
    def area(self) -> int:
        """Number of foreground pixels."""
        return int(sum(self.runs[1::2]))

    @property
    def is_empty(self) -> bool:
        return len(self.runs) == 1


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, bounds inclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Pixel IoU of two same-size masks. Both empty counts as 1.0.

    The empty/empty convention keeps absent-instrument frames from penalizing
    per-class averages downstream.
    """
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"mask dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    if a.is_empty and b.is_empty:
        return 1.0
    aa = a.to_array()
    bb = b.to_array()
    inter = int(np.count_nonzero(aa & bb))
    union = int(np.count_nonzero(aa | bb))
    return inter / union


def bbox_iou(a: BBox, b: BBox) -> float:
    """Rectangle IoU with inclusive pixel bounds; 0 when disjoint."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def tight_bbox(mask: BinaryMask) -> Optional[BBox]:
    """Tight bounds of the foreground, or None for an empty mask."""
    if mask.is_empty:
        return None
    arr = mask.to_array()
    rows = np.flatnonzero(arr.any(axis=1))
    cols = np.flatnonzero(arr.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense backbone feature grid at one scale, laid out (channels, h, w)."""

    scale_id: int
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ValueError(f"feature grid must be (C, h, w), got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("feature grid contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_height(self) -> int:
        return self.values.shape[1]

    @property
    def grid_width(self) -> int:
        return self.values.shape[2]


def downsample_mask(mask: BinaryMask, grid_height: int, grid_width: int) -> np.ndarray:
    """Nearest-neighbor downsample of a mask to a feature-grid resolution.

    Each grid cell samples the source pixel under its center, which is
    deterministic and exactly reproducible in tests.
    """
    arr = mask.to_array()
    ys = np.minimum(
        ((np.arange(grid_height) + 0.5) * mask.height / grid_height).astype(np.int64),
        mask.height - 1,
    )
    xs = np.minimum(
        ((np.arange(grid_width) + 0.5) * mask.width / grid_width).astype(np.int64),
        mask.width - 1,
    )
    return arr[np.ix_(ys, xs)]


def masked_mean_pool(fm: FeatureMap, mask: BinaryMask) -> Optional[np.ndarray]:
    """Mean feature vector over the mask region, or None if nothing is covered.

    The frame-resolution mask is aligned to the grid by nearest-neighbor
    downsampling, then values are averaged per channel over foreground cells.
    """
    grid = downsample_mask(mask, fm.grid_height, fm.grid_width)
    if not grid.any():
        return None
    return fm.values[:, grid].astype(np.float64).mean(axis=1)


@dataclass(frozen=True)
class CandidatePrediction:
    """One hypothesis mask with its quality and objectness confidences."""

    mask: BinaryMask
    quality: float
    objectness: float

    def __post_init__(self) -> None:
        for name, value in (("quality", self.quality), ("objectness", self.objectness)):
            if not np.isfinite(value) or not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be finite in [0, 1], got {value}")


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """One backend output for one track at one frame.

    Carries exactly three candidate masks (the backend's multi-hypothesis
    output) plus the frame's multi-scale feature grids.
    """

    track_id: int
    frame: FrameMeta
    candidates: tuple[CandidatePrediction, ...]
    features: tuple[FeatureMap, ...]

    def __post_init__(self) -> None:
        if len(self.candidates) != 3:
            raise ValueError(f"expected exactly 3 candidates, got {len(self.candidates)}")
        if len(self.features) < 1:
            raise ValueError("at least one feature scale is required")
        for cand in self.candidates:
            if (cand.mask.height, cand.mask.width) != (self.frame.height, self.frame.width):
                raise ValueError("candidate mask size differs from frame size")

    @property
    def selected_index(self) -> int:
        """Index of the winning candidate: argmax quality*objectness, lowest index on ties."""
        scores = [c.quality * c.objectness for c in self.candidates]
        return int(np.argmax(scores))

    @property
    def selected(self) -> CandidatePrediction:
        return self.candidates[self.selected_index]

    @property
    def reliability(self) -> float:
        """Gating signal for memory admission: objectness times quality."""
        sel = self.selected
        return sel.objectness * sel.quality
