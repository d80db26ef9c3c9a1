"""Segmentation metrics and identity-switch counting for replay evaluation.

Three mask metrics are reported as percentages:

* challenge IoU - per-frame IoU of each class present in the ground truth of
  that frame, averaged over all such (frame, class) pairs;
* IoU - dataset-level per-class IoU (accumulated intersection over
  accumulated union), averaged over classes that appear anywhere in the
  ground truth;
* mcIoU - the same per-class IoUs averaged over ALL declared classes, so
  false positives on absent classes drag the average down. A class that never
  appears and is never predicted (0/0) is excluded rather than counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import BinaryMask, mask_iou


@dataclass(frozen=True)
class MetricsReport:
    challenge_iou: float
    iou: float
    mciou: float
    per_class_iou: dict[int, Optional[float]]


@dataclass
class EvalAccumulator:
    """Running per-class intersections/unions plus per-frame present-class IoUs.

    Accumulation is associative across frame partitions: accumulating two
    halves and merging equals accumulating the whole stream.
    """

    declared_classes: tuple[int, ...]
    inter: dict[int, int] = field(default_factory=dict)
    union: dict[int, int] = field(default_factory=dict)
    gt_pixels: dict[int, int] = field(default_factory=dict)
    frame_class_ious: list[float] = field(default_factory=list)
    frames: int = 0

    def __post_init__(self) -> None:
        declared = tuple(sorted(set(int(c) for c in self.declared_classes)))
        if any(c <= 0 for c in declared):
            raise ValueError("declared class ids must be positive (0 is background)")
        object.__setattr__(self, "declared_classes", declared)
        for c in declared:
            self.inter.setdefault(c, 0)
            self.union.setdefault(c, 0)
            self.gt_pixels.setdefault(c, 0)

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> None:
        """Add one frame of label maps (0 = background)."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"label map shapes differ: {pred.shape} vs {gt.shape}")
        self.frames += 1
        for c in self.declared_classes:
            in_pred = pred == c
            in_gt = gt == c
            inter = int(np.count_nonzero(in_pred & in_gt))
            union = int(np.count_nonzero(in_pred | in_gt))
            gt_px = int(np.count_nonzero(in_gt))
            self.inter[c] += inter
            self.union[c] += union
            self.gt_pixels[c] += gt_px
            if gt_px > 0:
                self.frame_class_ious.append(inter / union)

    def merge(self, other: "EvalAccumulator") -> None:
        if self.declared_classes != other.declared_classes:
            raise ValueError("cannot merge accumulators with different class sets")
        for c in self.declared_classes:
            self.inter[c] += other.inter[c]
            self.union[c] += other.union[c]
            self.gt_pixels[c] += other.gt_pixels[c]
        self.frame_class_ious.extend(other.frame_class_ious)
        self.frames += other.frames

    def finalize(self) -> MetricsReport:
        """Reduce to the three headline percentages plus per-class IoUs."""
        if self.frames == 0:
            raise ValueError("no frames accumulated")
        per_class: dict[int, Optional[float]] = {}
        for c in self.declared_classes:
            per_class[c] = self.inter[c] / self.union[c] if self.union[c] > 0 else None
        challenge = (
            100.0 * float(np.mean(self.frame_class_ious)) if self.frame_class_ious else 100.0
        )
        present = [per_class[c] for c in self.declared_classes if self.gt_pixels[c] > 0]
        iou = 100.0 * float(np.mean(present)) if present else float("nan")
        scored = [v for v in per_class.values() if v is not None]
        mciou = 100.0 * float(np.mean(scored)) if scored else float("nan")
        return MetricsReport(challenge, iou, mciou, per_class)


def count_id_switches(
    pred_tracks: Mapping[int, Mapping[int, BinaryMask]],
    gt_tracks: Mapping[int, Mapping[int, BinaryMask]],
    iou_threshold: float = 0.5,
) -> int:
    """Frames where a track's best-overlapping ground-truth identity changes.

    For each track, the best-overlap ground-truth object (mask IoU >= the
    threshold) is followed frame by frame; a switch is counted whenever it
    differs from the previous qualifying assignment. Frames with no
    qualifying overlap neither count nor reset the assignment, so losing and
    regaining the same object is free.
    """
    switches = 0
    for track_id in sorted(pred_tracks):
        frames = pred_tracks[track_id]
        last_identity: Optional[int] = None
        for frame_index in sorted(frames):
            mask = frames[frame_index]
            if mask.is_empty:
                continue
            best_identity = None
            best_iou = 0.0
            for gt_id in sorted(gt_tracks):
                gt_mask = gt_tracks[gt_id].get(frame_index)
                if gt_mask is None or gt_mask.is_empty:
                    continue
                overlap = mask_iou(mask, gt_mask)
                # ties keep the lowest gt id for determinism
                if overlap >= iou_threshold and overlap > best_iou:
                    best_iou = overlap
                    best_identity = gt_id
            if best_identity is None:
                continue
            if last_identity is not None and best_identity != last_identity:
                switches += 1
            last_identity = best_identity
    return switches
