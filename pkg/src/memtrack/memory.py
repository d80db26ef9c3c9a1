"""Dual memory banks with gated insertion and recovery-time population.

Three stores cooperate per track:

* relevance bank  - recency-ordered, admits only frames whose reliability
  r = objectness * quality clears ``tau_rel``; drives normal propagation.
* occlusion bank  - refilled at each disocclusion from the history buffer
  under the relaxed threshold ``tau_occ`` (< tau_rel), preserving the
  low-confidence pre-occlusion frames that carry identity cues.
* unconditional buffer - append-only record of every observed frame
  regardless of reliability; the source the occlusion bank draws from.

With occlusion handling disabled the full slot budget goes to the relevance
bank, which at ``tau_rel`` near zero degenerates to a plain FIFO sliding
window (the vanilla-backend baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass(frozen=True)
class MemoryEntry:
    """One frame summary: when it happened, how reliable it was, plus an opaque payload."""

    frame_index: int
    reliability: float
    summary: Any = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be non-negative, got {self.frame_index}")
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError(f"reliability must be in [0, 1], got {self.reliability}")


@dataclass
class DualMemory:
    """Capacity-bounded relevance and occlusion banks for one track.

    When ``occlusion_enabled`` the budget splits ceil(M/2) relevance /
    floor(M/2) occlusion; otherwise relevance owns all M slots and the
    occlusion bank stays empty. An optional pinned entry (the track's
    initialization frame) permanently occupies one relevance slot and is
    never evicted.
    """

    total_capacity: int
    tau_rel: float
    tau_occ: float
    occlusion_enabled: bool = True
    rel_entries: list[MemoryEntry] = field(default_factory=list)
    occ_entries: list[MemoryEntry] = field(default_factory=list)
    pinned: Optional[MemoryEntry] = None

    def __post_init__(self) -> None:
        if self.total_capacity < 2:
            raise ValueError(f"total capacity must be >= 2, got {self.total_capacity}")
        if not self.tau_occ < self.tau_rel:
            raise ValueError(
                f"tau_occ must be strictly below tau_rel, got {self.tau_occ} >= {self.tau_rel}"
            )

    @property
    def rel_capacity(self) -> int:
        if not self.occlusion_enabled:
            return self.total_capacity
        return (self.total_capacity + 1) // 2

    @property
    def occ_capacity(self) -> int:
        if not self.occlusion_enabled:
            return 0
        return self.total_capacity // 2

    def pin(self, entry: MemoryEntry) -> None:
        """Pin the initialization frame; it holds one relevance slot for good."""
        if self.pinned is not None:
            raise ValueError("initialization frame already pinned")
        self.pinned = entry

    def last_frame_index(self) -> int:
        latest = -1
        if self.pinned is not None:
            latest = self.pinned.frame_index
        if self.rel_entries:
            latest = max(latest, self.rel_entries[-1].frame_index)
        return latest


@dataclass
class UnconditionalBuffer:
    """Append-only history of every observed frame, optionally ring-capped."""

    retention_cap: Optional[int] = None
    entries: list[MemoryEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.retention_cap is not None and self.retention_cap < 64:
            raise ValueError(f"retention cap must keep at least 64 entries, got {self.retention_cap}")

    def append(self, entry: MemoryEntry) -> None:
        if self.entries and entry.frame_index <= self.entries[-1].frame_index:
            raise ValueError(
                f"frame index {entry.frame_index} not greater than last buffered "
                f"{self.entries[-1].frame_index}"
            )
        self.entries.append(entry)
        if self.retention_cap is not None and len(self.entries) > self.retention_cap:
            del self.entries[0]

    def last_frame_index(self) -> int:
        return self.entries[-1].frame_index if self.entries else -1


def observe(dm: DualMemory, buf: UnconditionalBuffer, entry: MemoryEntry) -> bool:
    """Record one observed frame; returns whether it was admitted to the relevance bank.

    Every frame lands in the buffer. Admission to the relevance bank requires
    r >= tau_rel; when the bank overflows the oldest evictable entry goes
    (the pinned entry never does).
    """
    if entry.frame_index <= max(buf.last_frame_index(), dm.last_frame_index()):
        raise ValueError(f"frame index {entry.frame_index} is not strictly increasing")
    buf.append(entry)
    if entry.reliability < dm.tau_rel:
        return False
    dm.rel_entries.append(entry)
    budget = dm.rel_capacity - (1 if dm.pinned is not None else 0)
    while len(dm.rel_entries) > max(budget, 0):
        del dm.rel_entries[0]
    return True


def populate_occlusion_memory(
    dm: DualMemory, buf: UnconditionalBuffer, recovery_frame: int
) -> None:
    """Refill the occlusion bank for a disocclusion at ``recovery_frame``.

    Takes the most recent buffered frames strictly before the recovery frame
    whose reliability clears tau_occ, up to the bank's capacity. May select
    fewer than capacity, or none.
    """
    if dm.occ_capacity == 0:
        dm.occ_entries = []
        return
    eligible = [
        e
        for e in buf.entries
        if e.frame_index < recovery_frame and e.reliability >= dm.tau_occ
    ]
    dm.occ_entries = eligible[-dm.occ_capacity :]


def snapshot(dm: DualMemory) -> list[tuple[MemoryEntry, int]]:
    """Merged view of both banks in frame order with assigned position indices.

    A frame present in both banks appears once; the relevance copy wins (it
    carries higher-trust provenance). The pinned entry counts as relevance.
    """
    merged: dict[int, MemoryEntry] = {}
    for entry in dm.occ_entries:
        merged[entry.frame_index] = entry
    for entry in dm.rel_entries:
        merged[entry.frame_index] = entry
    if dm.pinned is not None:
        merged[dm.pinned.frame_index] = dm.pinned
    ordered = [merged[idx] for idx in sorted(merged)]
    return [(entry, pos) for pos, entry in enumerate(ordered)]
