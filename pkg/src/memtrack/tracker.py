"""Per-instrument lifecycle orchestration and quality-weighted label fusion.

Each track runs a three-phase state machine:

* Active     - the object is being followed; frames are emitted immediately,
  gated memory updates and reference-bank admissions happen here.
* Occluded   - objectness dropped to zero (or the selected mask is empty);
  nothing is emitted, so an absent instrument can never paint pixels.
* Recovering - objectness came back. The occlusion bank is refilled from the
  history buffer, and the next K frames are emitted provisionally while
  identity evidence accumulates. The recovery vote then confirms the frames
  (Accept), relabels them to another class (Reassign), or withdraws them
  entirely (Reject).

Because recovering frames are provisional, finalized output lags live input
by up to K frames; the output buffer releases a frame only once every claim
on it is settled. Fusion is per-pixel: the claiming track with the highest
reliability wins, ties break toward the lower class id.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

from .core import BinaryMask, FrameMeta, PredictionRecord
from .memory import (
    DualMemory,
    MemoryEntry,
    UnconditionalBuffer,
    observe,
    populate_occlusion_memory,
    snapshot,
)
from .posenc import EncodingTable, expand_piecewise, expand_uniform, reference_base_table
from .reid import (
    FeatureBank,
    FeatureDescriptor,
    RecoveryWindow,
    Verdict,
    WindowFrame,
    bank_admit,
    cross_similarity,
    extract_descriptor,
    max_overlap_with_others,
    self_similarity,
    vote,
    window_means,
)

EPS_OCC = 1e-6  # objectness at or below this counts as "gone"


class Phase(Enum):
    ACTIVE = "active"
    OCCLUDED = "occluded"
    RECOVERING = "recovering"


@dataclass
class EngineConfig:
    """All engine thresholds. ``baseline_mode`` collapses to the plain
    FIFO backend emulation: no gating, no occlusion bank, no identity checks."""

    memory_size: int = 15
    tau_rel: float = 0.95
    tau_occ: float = 0.65
    window: int = 5
    bank_cap: int = 20
    delta_sim: float = 0.01
    delta_sim_neg: float = -0.01
    delta_iou: float = 0.8
    delta_agree: float = 0.8
    scheme: str = "piecewise"
    baseline_mode: bool = False
    enable_reid: bool = True
    enable_occ_memory: bool = True
    buffer_cap: Optional[int] = None

    def __post_init__(self) -> None:
        if self.baseline_mode:
            self.memory_size = 7
            self.tau_rel = 0.01
            self.tau_occ = 0.001
            self.enable_reid = False
            self.enable_occ_memory = False
        if self.memory_size < 7:
            raise ValueError(f"memory size must be >= 7, got {self.memory_size}")
        if not self.tau_occ < self.tau_rel:
            raise ValueError("tau_occ must be strictly below tau_rel")
        if self.window < 1:
            raise ValueError("recovery window must be >= 1 frame")
        if self.scheme not in ("piecewise", "uniform"):
            raise ValueError(f"unknown expansion scheme {self.scheme!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))

    @classmethod
    def from_preset(cls, name: str) -> "EngineConfig":
        presets = {
            "full": lambda: cls(),
            "baseline": lambda: cls(baseline_mode=True),
            "vanilla": lambda: cls(baseline_mode=True),
            "rm": lambda: cls(memory_size=7, enable_reid=False, enable_occ_memory=False),
            "rm_me": lambda: cls(enable_reid=False, enable_occ_memory=False),
            "rm_me_reid": lambda: cls(enable_occ_memory=False),
        }
        if name not in presets:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(presets)}")
        return presets[name]()

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def ablation_arms() -> list[tuple[str, EngineConfig]]:
    """The five standard configurations, weakest to strongest: plain FIFO
    baseline, + relevance gating, + expanded memory, + identity verification,
    + occlusion bank."""
    return [
        ("vanilla", EngineConfig.from_preset("vanilla")),
        ("rm", EngineConfig.from_preset("rm")),
        ("rm_me", EngineConfig.from_preset("rm_me")),
        ("rm_me_reid", EngineConfig.from_preset("rm_me_reid")),
        ("full", EngineConfig.from_preset("full")),
    ]


@dataclass
class TrackState:
    """Mutable per-instrument state owned by the engine."""

    track_id: int
    class_id: int
    phase: Phase
    memory: DualMemory
    buffer: UnconditionalBuffer
    window: Optional[RecoveryWindow] = None
    window_reliabilities: list[float] = field(default_factory=list)
    pending_bank: list[FeatureDescriptor] = field(default_factory=list)
    last_reliability: float = 0.0


def init_track(
    first_mask: BinaryMask,
    class_id: int,
    frame: FrameMeta,
    cfg: EngineConfig,
    track_id: Optional[int] = None,
    reliability: float = 1.0,
) -> TrackState:
    """Start a track from its first visible mask.

    The initialization frame is pinned into the relevance bank (one permanent
    slot) and logged to the history buffer.
    """
    if first_mask.is_empty:
        raise ValueError("cannot initialize a track from an empty mask")
    memory = DualMemory(
        cfg.memory_size,
        cfg.tau_rel,
        cfg.tau_occ,
        occlusion_enabled=cfg.enable_occ_memory,
    )
    buffer = UnconditionalBuffer(retention_cap=cfg.buffer_cap)
    entry = MemoryEntry(frame.frame_index, reliability, summary={"mask": first_mask})
    memory.pin(entry)
    buffer.append(entry)
    return TrackState(
        track_id=track_id if track_id is not None else class_id,
        class_id=class_id,
        phase=Phase.ACTIVE,
        memory=memory,
        buffer=buffer,
        last_reliability=reliability,
    )


@dataclass
class Emission:
    track_id: int
    class_id: int
    mask: BinaryMask
    reliability: float
    final: bool


@dataclass(frozen=True)
class FinalizedFrame:
    frame_index: int
    label_map: np.ndarray
    claims: tuple[Emission, ...]


def fuse(claims: Iterable[Emission], height: int, width: int) -> np.ndarray:
    """Per-pixel argmax-reliability fusion of claim masks into a label map.

    Painting in (reliability desc, class asc) order onto still-unclaimed
    pixels realizes the per-pixel rule exactly, so the result is independent
    of the claims' input order.
    """
    label = np.zeros((height, width), dtype=np.int32)
    for em in sorted(claims, key=lambda e: (-e.reliability, e.class_id)):
        if em.mask.is_empty:
            continue
        region = em.mask.to_array() & (label == 0)
        label[region] = em.class_id
    return label


class OutputBuffer:
    """Holds per-frame emissions until every provisional claim is resolved.

    Frames leave in order; a frame is releasable once its processing finished
    and none of its emissions are still provisional.
    """

    def __init__(self) -> None:
        self._frames: "OrderedDict[int, list[Emission]]" = OrderedDict()
        self._complete: set[int] = set()

    def start_frame(self, frame_index: int) -> None:
        self._frames[frame_index] = []

    def add(self, frame_index: int, emission: Emission) -> None:
        self._frames[frame_index].append(emission)

    def emissions(self, frame_index: int) -> list[Emission]:
        return self._frames[frame_index]

    def mark_complete(self, frame_index: int) -> None:
        self._complete.add(frame_index)

    def confirm(self, track_id: int, frame_indices: Iterable[int]) -> None:
        for t in frame_indices:
            for em in self._frames.get(t, []):
                if em.track_id == track_id and not em.final:
                    em.final = True

    def relabel(self, track_id: int, frame_indices: Iterable[int], new_class: int) -> None:
        for t in frame_indices:
            for em in self._frames.get(t, []):
                if em.track_id == track_id and not em.final:
                    em.class_id = new_class
                    em.final = True

    def withdraw(self, track_id: int, frame_indices: Iterable[int]) -> None:
        for t in frame_indices:
            if t not in self._frames:
                continue
            self._frames[t] = [
                em for em in self._frames[t] if em.final or em.track_id != track_id
            ]

    def pop_ready(self) -> list[tuple[int, list[Emission]]]:
        ready = []
        while self._frames:
            frame_index, ems = next(iter(self._frames.items()))
            if frame_index not in self._complete or any(not em.final for em in ems):
                break
            ready.append((frame_index, ems))
            del self._frames[frame_index]
            self._complete.discard(frame_index)
        return ready


class TrackingEngine:
    """Drives every declared track over a stream of per-frame backend records."""

    def __init__(
        self,
        cfg: EngineConfig,
        track_classes: Mapping[int, int],
        height: int,
        width: int,
    ) -> None:
        classes = list(track_classes.values())
        if len(set(classes)) != len(classes):
            raise ValueError("one track per instrument class: duplicate class declared")
        self.cfg = cfg
        self.track_classes = dict(track_classes)
        self.height = height
        self.width = width
        self.tracks: dict[int, TrackState] = {}
        self.banks: dict[int, FeatureBank] = {}
        self.class_owner: dict[int, int] = {}
        expand = expand_piecewise if cfg.scheme == "piecewise" else expand_uniform
        self.encodings: EncodingTable = expand(reference_base_table(), cfg.memory_size)
        self.output = OutputBuffer()
        self.events: list[dict] = []
        self.memory_trace: list[dict] = []
        self.reid_trace: list[dict] = []
        self.track_outputs: dict[int, dict[int, BinaryMask]] = {}
        self._last_frame = -1

    # ------------------------------------------------------------------ api

    def process_frame(
        self, frame: FrameMeta, records: Mapping[int, PredictionRecord]
    ) -> list[FinalizedFrame]:
        """Step every track one frame; returns frames finalized by this step."""
        t = frame.frame_index
        if t <= self._last_frame:
            raise ValueError(f"frame {t} does not advance past {self._last_frame}")
        self._last_frame = t
        self.output.start_frame(t)

        missing = [tid for tid in self.tracks if tid not in records]
        if missing:
            raise ValueError(f"missing record(s) for live track(s) {sorted(missing)}")

        recovering: list[tuple[TrackState, PredictionRecord, BinaryMask]] = []
        for track_id in sorted(records):
            record = records[track_id]
            if record.frame.frame_index != t:
                raise ValueError("record frame index differs from stream frame")
            if track_id not in self.tracks:
                self._maybe_init(track_id, record)
            else:
                self._step(self.tracks[track_id], record, recovering)

        # barrier: cross-bank reads and overlap checks see this frame's
        # completed memory/bank updates and final emissions
        for state, record, mask in recovering:
            self._score_recovery_frame(state, record, mask)
        for state, _, _ in recovering:
            if state.window is not None and state.window.full:
                self._resolve_window(state)

        self.output.mark_complete(t)
        return self._drain()

    def finish(self) -> list[FinalizedFrame]:
        """Resolve any open recovery windows on the collected frames and flush."""
        for track_id in sorted(self.tracks):
            state = self.tracks[track_id]
            if state.phase is Phase.RECOVERING and state.window and state.window.frames:
                self._resolve_window(state)
        return self._drain()

    # ------------------------------------------------------------ internals

    def _maybe_init(self, track_id: int, record: PredictionRecord) -> None:
        if track_id not in self.track_classes:
            raise ValueError(f"record for undeclared track {track_id}")
        selected = record.selected
        if selected.objectness <= EPS_OCC or selected.mask.is_empty:
            return  # not visible yet; no track
        class_id = self.track_classes[track_id]
        if class_id in self.class_owner:
            raise ValueError(f"class {class_id} already tracked")
        state = init_track(
            selected.mask,
            class_id,
            record.frame,
            self.cfg,
            track_id=track_id,
            reliability=record.reliability,
        )
        self.tracks[track_id] = state
        self.class_owner[class_id] = track_id
        self._maybe_bank(state, record)
        self._emit(state, record.frame.frame_index, selected.mask, record.reliability, final=True)
        self._trace_memory(state, record.frame.frame_index, record.reliability, True, False)

    def _step(
        self,
        state: TrackState,
        record: PredictionRecord,
        recovering: list,
    ) -> None:
        t = record.frame.frame_index
        selected = record.selected
        r = record.reliability
        gone = selected.objectness <= EPS_OCC or selected.mask.is_empty

        admitted = observe(state.memory, state.buffer, MemoryEntry(t, r))
        occ_refresh = False

        if state.phase is Phase.ACTIVE:
            if gone:
                state.phase = Phase.OCCLUDED
                self._event("occlusion_start", state, t)
            else:
                self._maybe_bank(state, record)
                self._emit(state, t, selected.mask, r, final=True)
                state.last_reliability = r

        elif state.phase is Phase.OCCLUDED:
            if not gone:
                if self.cfg.enable_occ_memory:
                    populate_occlusion_memory(state.memory, state.buffer, t)
                    occ_refresh = True
                if self.cfg.enable_reid:
                    state.phase = Phase.RECOVERING
                    state.window = RecoveryWindow(state.class_id, self.cfg.window)
                    state.window_reliabilities = []
                    state.pending_bank = []
                    self._event("recovery_start", state, t)
                    self._emit(state, t, selected.mask, r, final=False)
                    recovering.append((state, record, selected.mask))
                else:
                    state.phase = Phase.ACTIVE
                    self._emit(state, t, selected.mask, r, final=True)
                    state.last_reliability = r

        elif state.phase is Phase.RECOVERING:
            if gone:
                # a second occlusion inside the window: abort conservatively,
                # the unverified provisional frames are withdrawn
                self._withdraw_window(state, t, reason="window_aborted")
                state.phase = Phase.OCCLUDED
                self._event("occlusion_start", state, t)
            else:
                self._emit(state, t, selected.mask, r, final=False)
                recovering.append((state, record, selected.mask))

        self._trace_memory(state, t, r, admitted, occ_refresh)

    def _score_recovery_frame(
        self, state: TrackState, record: PredictionRecord, mask: BinaryMask
    ) -> None:
        t = record.frame.frame_index
        cur = extract_descriptor(record)
        s_self: Optional[float] = None
        s_other: Optional[float] = None
        other_class: Optional[int] = None
        if cur is not None:
            bank = self.banks.get(state.class_id)
            if bank is not None:
                s_self = self_similarity(cur, bank)
            cross = cross_similarity(cur, self.banks, exclude=state.class_id)
            if cross is not None:
                s_other, other_class = cross
            if bank_admit(record, self.cfg.tau_rel, self.cfg.delta_agree):
                state.pending_bank.append(cur)
        others = [
            em.mask
            for em in self.output.emissions(t)
            if em.final and em.track_id != state.track_id
        ]
        overlap = max_overlap_with_others(mask, others)
        state.window.add(WindowFrame(t, s_self, s_other, other_class, overlap))
        state.window_reliabilities.append(record.reliability)

    def _resolve_window(self, state: TrackState) -> None:
        window = state.window
        decision = vote(window, self.cfg.delta_sim, self.cfg.delta_sim_neg, self.cfg.delta_iou)
        s_self, s_other, overlap = window_means(window)
        frames = [wf.frame_index for wf in window.frames]
        t = frames[-1]
        self.reid_trace.append(
            {
                "class": state.class_id,
                "window_frames": frames,
                "s_self_mean": s_self,
                "s_other_mean": s_other,
                "overlap_mean": overlap,
                "decision": decision.verdict.value,
                "target_class": decision.target_class,
            }
        )
        self._event(
            "reid_decision",
            state,
            t,
            verdict=decision.verdict.value,
            target_class=decision.target_class,
        )

        if decision.verdict is Verdict.ACCEPT:
            self.output.confirm(state.track_id, frames)
            state.phase = Phase.ACTIVE
            bank = self._bank_for(state.class_id)
            for descriptor in state.pending_bank:
                bank.add(descriptor)
            state.last_reliability = state.window_reliabilities[-1]

        elif decision.verdict is Verdict.REASSIGN:
            self._apply_reassign(state, frames, decision.target_class, t)

        else:  # REJECT
            self._withdraw_window(state, t, reason="rejected")
            state.phase = Phase.OCCLUDED

        state.window = None
        state.window_reliabilities = []
        state.pending_bank = []

    def _apply_reassign(
        self, state: TrackState, frames: list[int], target: int, t: int
    ) -> None:
        """Reassignment into a class that is actively tracked suppresses the
        lower-reliability duplicate; otherwise the recovering track relabels."""
        owner_id = self.class_owner.get(target)
        owner = self.tracks.get(owner_id) if owner_id is not None else None
        if owner is not None and owner is not state and owner.phase is Phase.ACTIVE:
            window_r = sum(state.window_reliabilities) / len(state.window_reliabilities)
            if window_r <= owner.last_reliability:
                self._withdraw_window(state, t, reason="duplicate_suppressed")
                state.phase = Phase.OCCLUDED
                return
            # the recovering track wins the identity; the incumbent goes quiet
            owner.phase = Phase.OCCLUDED
            self._event("occlusion_start", owner, t, reason="duplicate_suppressed")
        self.output.relabel(state.track_id, frames, target)
        self._event("relabel", state, t, from_class=state.class_id, to_class=target)
        if self.class_owner.get(state.class_id) == state.track_id:
            del self.class_owner[state.class_id]
        state.class_id = target
        self.class_owner[target] = state.track_id
        state.phase = Phase.ACTIVE
        state.last_reliability = state.window_reliabilities[-1]
        # reassigned frames never feed the target bank: their match to it is
        # the very evidence being acted on

    def _withdraw_window(self, state: TrackState, t: int, reason: str) -> None:
        frames = [wf.frame_index for wf in state.window.frames] if state.window else []
        self.output.withdraw(state.track_id, frames)
        self._event("withdrawal", state, t, frames=frames, reason=reason)

    def _maybe_bank(self, state: TrackState, record: PredictionRecord) -> None:
        if not self.cfg.enable_reid:
            return
        if not bank_admit(record, self.cfg.tau_rel, self.cfg.delta_agree):
            return
        descriptor = extract_descriptor(record)
        if descriptor is None:
            return
        self._bank_for(state.class_id).add(descriptor)

    def _bank_for(self, class_id: int) -> FeatureBank:
        if class_id not in self.banks:
            self.banks[class_id] = FeatureBank(class_id, capacity=self.cfg.bank_cap)
        return self.banks[class_id]

    def _emit(
        self, state: TrackState, t: int, mask: BinaryMask, r: float, final: bool
    ) -> None:
        self.output.add(t, Emission(state.track_id, state.class_id, mask, r, final))

    def _event(self, kind: str, state: TrackState, t: int, **extra) -> None:
        self.events.append(
            {"event": kind, "frame": t, "track": state.track_id, "class": state.class_id, **extra}
        )

    def _trace_memory(
        self, state: TrackState, t: int, r: float, admitted: bool, occ_refresh: bool
    ) -> None:
        snap = snapshot(state.memory)
        assert len(snap) <= self.cfg.memory_size, "memory snapshot exceeded slot budget"
        self.memory_trace.append(
            {
                "frame": t,
                "track": state.track_id,
                "r": r,
                "admitted_rel": admitted,
                "occ_refresh": occ_refresh,
                "snapshot_frames": [entry.frame_index for entry, _ in snap],
            }
        )

    def _drain(self) -> list[FinalizedFrame]:
        finalized = []
        for frame_index, emissions in self.output.pop_ready():
            claims = tuple(em for em in emissions if not em.mask.is_empty)
            label = fuse(claims, self.height, self.width)
            for em in claims:
                self.track_outputs.setdefault(em.track_id, {})[frame_index] = em.mask
            finalized.append(FinalizedFrame(frame_index, label, claims))
        return finalized
