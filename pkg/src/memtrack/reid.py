"""Appearance reference banks, similarity scoring, and the recovery identity vote.

After a track reappears from occlusion, its identity is verified over a short
window of consecutive frames. Each frame contributes a self-similarity (mean
similarity of the current appearance descriptor to the track's own reference
bank, summed across scales), a cross-similarity (best such score against any
other class bank), and the spatial overlap with other active tracks. The
window means feed a three-way decision: keep the identity, reassign it to the
best-matching other class, or reject the recovery outright.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from .core import BinaryMask, PredictionRecord, bbox_iou, mask_iou, masked_mean_pool, tight_bbox


@dataclass(frozen=True, eq=False)
class FeatureDescriptor:
    """Per-scale masked-average appearance vectors for one frame."""

    vectors: tuple[np.ndarray, ...]
    frame_index: int

    def __post_init__(self) -> None:
        if not self.vectors:
            raise ValueError("descriptor needs at least one scale vector")
        frozen = []
        for vec in self.vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"scale vector must be 1-D, got shape {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError("descriptor contains non-finite values")
            if float(np.linalg.norm(arr)) == 0.0:
                raise ValueError("zero-norm scale vector rejected")
            frozen.append(arr)
        object.__setattr__(self, "vectors", tuple(frozen))

    @property
    def num_scales(self) -> int:
        return len(self.vectors)


@dataclass
class FeatureBank:
    """Bounded FIFO of reference descriptors for one instrument class."""

    class_id: int
    capacity: int = 20
    entries: list[FeatureDescriptor] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"bank capacity must be >= 1, got {self.capacity}")

    def add(self, descriptor: FeatureDescriptor) -> None:
        self.entries.append(descriptor)
        while len(self.entries) > self.capacity:
            del self.entries[0]

    def __len__(self) -> int:
        return len(self.entries)


class Verdict(Enum):
    ACCEPT = "accept"
    REASSIGN = "reassign"
    REJECT = "reject"


@dataclass(frozen=True)
class ReidDecision:
    """Outcome of a recovery vote; ``target_class`` is set only for reassignment."""

    verdict: Verdict
    target_class: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.verdict is Verdict.REASSIGN) != (self.target_class is not None):
            raise ValueError("target_class must be set exactly for reassignment")


@dataclass(frozen=True)
class WindowFrame:
    """Per-frame evidence collected while a track is recovering."""

    frame_index: int
    s_self: Optional[float]
    s_other: Optional[float]
    other_class: Optional[int]
    overlap: float


@dataclass
class RecoveryWindow:
    """Up to ``capacity`` consecutive frames of recovery evidence for one class."""

    class_id: int
    capacity: int
    frames: list[WindowFrame] = field(default_factory=list)

    def add(self, frame: WindowFrame) -> None:
        if len(self.frames) >= self.capacity:
            raise ValueError("recovery window already full")
        self.frames.append(frame)

    @property
    def full(self) -> bool:
        return len(self.frames) >= self.capacity


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors compare as 0.0 against anything."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def bank_admit(record: PredictionRecord, tau_rel: float, delta_agree: float) -> bool:
    """Whether a frame is trustworthy enough to contribute a reference descriptor.

    Requires the selected candidate's reliability to clear ``tau_rel`` and the
    three candidate boxes to agree pairwise (min bbox IoU >= ``delta_agree``).
    A candidate with no box (empty mask) fails agreement.
    """
    if record.reliability < tau_rel:
        return False
    boxes = [tight_bbox(c.mask) for c in record.candidates]
    if any(box is None for box in boxes):
        return False
    for i in range(3):
        for j in range(i + 1, 3):
            if bbox_iou(boxes[i], boxes[j]) < delta_agree:
                return False
    return True


def extract_descriptor(record: PredictionRecord) -> Optional[FeatureDescriptor]:
    """Masked-average descriptor over the selected candidate, one vector per scale.

    Returns None when any scale pools to nothing (empty or vanishing mask).
    """
    mask = record.selected.mask
    vectors = []
    for fm in record.features:
        pooled = masked_mean_pool(fm, mask)
        if pooled is None:
            return None
        vectors.append(pooled)
    return FeatureDescriptor(tuple(vectors), record.frame.frame_index)


def self_similarity(cur: FeatureDescriptor, bank: FeatureBank) -> Optional[float]:
    """Mean over bank entries of the summed per-scale cosine; None for an empty bank."""
    if not bank.entries:
        return None
    total = 0.0
    for ref in bank.entries:
        if ref.num_scales != cur.num_scales:
            raise ValueError(
                f"scale count mismatch: descriptor has {cur.num_scales}, "
                f"bank entry has {ref.num_scales}"
            )
        total += sum(cosine(c, r) for c, r in zip(cur.vectors, ref.vectors))
    return total / len(bank.entries)


def cross_similarity(
    cur: FeatureDescriptor, banks: Mapping[int, FeatureBank], exclude: int
) -> Optional[tuple[float, int]]:
    """Best self-similarity-style score against any other class bank.

    Returns (score, class id) with ties broken toward the lowest class id, or
    None when every other bank is empty.
    """
    best: Optional[tuple[float, int]] = None
    for class_id in sorted(banks):
        if class_id == exclude:
            continue
        score = self_similarity(cur, banks[class_id])
        if score is None:
            continue
        if best is None or score > best[0]:
            best = (score, class_id)
    return best


def decide(
    s_self: float,
    s_other: float,
    overlap: float,
    delta_sim: float,
    delta_sim_neg: float,
    delta_iou: float,
) -> Verdict:
    """Three-way identity decision on window-mean evidence.

    Accept when the identity margin holds and the recovered mask stays clear
    of other tracked instruments; otherwise reassign when the margin runs the
    other way past ``delta_sim_neg``; otherwise reject.
    """
    if s_self - s_other >= delta_sim and overlap <= delta_iou:
        return Verdict.ACCEPT
    if s_other - s_self >= delta_sim_neg:
        return Verdict.REASSIGN
    return Verdict.REJECT


def window_means(window: RecoveryWindow) -> tuple[Optional[float], Optional[float], float]:
    """(mean s_self, mean s_other, mean overlap); similarity means skip absent frames."""
    if not window.frames:
        raise ValueError("cannot summarize an empty recovery window")
    self_vals = [f.s_self for f in window.frames if f.s_self is not None]
    other_vals = [f.s_other for f in window.frames if f.s_other is not None]
    overlap = sum(f.overlap for f in window.frames) / len(window.frames)
    s_self = sum(self_vals) / len(self_vals) if self_vals else None
    s_other = sum(other_vals) / len(other_vals) if other_vals else None
    return s_self, s_other, overlap


def vote(
    window: RecoveryWindow,
    delta_sim: float,
    delta_sim_neg: float,
    delta_iou: float,
) -> ReidDecision:
    """Aggregate a recovery window into a final identity decision.

    Frames with absent similarities are skipped in the means. A window with no
    similarity evidence at all accepts by default (nothing argues against the
    identity); when only one side is missing it counts as 0. Reassignment goes
    to the modal per-frame best other class, ties resolved by the most recent
    tied frame; with no such class the reassignment falls through to reject.
    """
    s_self, s_other, overlap = window_means(window)
    if s_self is None and s_other is None:
        return ReidDecision(Verdict.ACCEPT)
    verdict = decide(
        s_self if s_self is not None else 0.0,
        s_other if s_other is not None else 0.0,
        overlap,
        delta_sim,
        delta_sim_neg,
        delta_iou,
    )
    if verdict is not Verdict.REASSIGN:
        return ReidDecision(verdict)
    target = _modal_other_class(window)
    if target is None or target == window.class_id:
        return ReidDecision(Verdict.REJECT)
    return ReidDecision(Verdict.REASSIGN, target)


def _modal_other_class(window: RecoveryWindow) -> Optional[int]:
    counts: dict[int, int] = {}
    for frame in window.frames:
        if frame.other_class is not None:
            counts[frame.other_class] = counts.get(frame.other_class, 0) + 1
    if not counts:
        return None
    top = max(counts.values())
    tied = {cls for cls, n in counts.items() if n == top}
    for frame in reversed(window.frames):
        if frame.other_class in tied:
            return frame.other_class
    return None


def max_overlap_with_others(mask: BinaryMask, others: list[BinaryMask]) -> float:
    """Worst-competitor spatial overlap: max mask IoU against the given masks.

    An empty mask on either side overlaps nothing (the empty/empty = 1.0
    convention of ``mask_iou`` must not count as contact here).
    """
    best = 0.0
    for other in others:
        if mask.is_empty or other.is_empty:
            continue
        best = max(best, mask_iou(mask, other))
    return best
