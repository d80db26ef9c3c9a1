"""Exporter packaging per-frame segmentation-model outputs as ``.rmdi`` streams.

This is a pure serializer: no gating, no identity logic, nothing scientific.
It exists so real model outputs (three candidate masks with quality and
objectness scores per track, plus multi-scale backbone features) can be
replayed through the tracking engine, which consumes the files through its
documented reader. The wire layout mirrors that reader's contract exactly;
the golden-file tests pin byte-for-byte compatibility.

Wire layout (little-endian throughout):

    header:  magic b"RMDI", version u16 (1), height u32, width u32,
             num_scales u16 then (h u32, w u32, channels u32) per scale,
             num_classes u16 then (class_id u32, name_len u16, name utf-8),
             num_tracks u16 then (track_id u32, class_id u32)
    blocks:  payload_len u32, payload, crc32 u32 (zlib) of the payload
    payload: frame_index u32, num_records u16, then per record in ascending
             track id: track_id u32, three candidates (num_runs u32, runs
             u32 each, quality f32, objectness f32), then per scale the
             feature grid as channels*h*w f32 values in C order.

Masks travel run-length encoded: row-major scan order, alternating
background/foreground run lengths, first run counting background pixels
(possibly zero).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Mapping, Optional, Sequence

import numpy as np

MAGIC = b"RMDI"
VERSION = 1


@dataclass(frozen=True)
class AdapterConfig:
    """Stream declaration: geometry, exported scales, class and track tables.

    ``scale_shapes`` is what the header advertises; ``scale_indices`` picks
    which of the model's feature levels feed those slots (all, in order,
    when None). Features are cast to float32 on write.
    """

    height: int
    width: int
    scale_shapes: tuple[tuple[int, int, int], ...]  # (h, w, channels) per exported scale
    classes: dict[int, str] = field(default_factory=dict)
    tracks: dict[int, int] = field(default_factory=dict)
    scale_indices: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("frame dimensions must be positive")
        if not self.scale_shapes:
            raise ValueError("declare at least one exported scale")
        if self.scale_indices is not None and len(self.scale_indices) != len(self.scale_shapes):
            raise ValueError("scale_indices must match the declared scale count")


def encode_runs(mask: np.ndarray) -> np.ndarray:
    """Row-major alternating run lengths, background first (possibly zero)."""
    flat = np.asarray(mask, dtype=bool).ravel()
    edges = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return runs.astype("<u4")


def _pack_header(cfg: AdapterConfig) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<II", cfg.height, cfg.width)]
    parts.append(struct.pack("<H", len(cfg.scale_shapes)))
    for h, w, c in cfg.scale_shapes:
        parts.append(struct.pack("<III", h, w, c))
    parts.append(struct.pack("<H", len(cfg.classes)))
    for class_id in sorted(cfg.classes):
        name = cfg.classes[class_id].encode("utf-8")
        parts.append(struct.pack("<IH", class_id, len(name)) + name)
    parts.append(struct.pack("<H", len(cfg.tracks)))
    for track_id in sorted(cfg.tracks):
        parts.append(struct.pack("<II", track_id, cfg.tracks[track_id]))
    return b"".join(parts)


class RecordExporter:
    """Sequential ``.rmdi`` writer; a block is written only after it validates whole."""

    def __init__(self, path: str | Path, cfg: AdapterConfig) -> None:
        self.cfg = cfg
        self._fh: BinaryIO = open(path, "wb")
        self._fh.write(_pack_header(cfg))
        self._last_frame = -1

    def export_frame(
        self,
        frame_index: int,
        masks: Mapping[int, np.ndarray],
        scores: Mapping[int, np.ndarray],
        features: Sequence[np.ndarray],
    ) -> None:
        """Append one frame block.

        masks:   per track, (3, H, W) boolean candidate stack
        scores:  per track, (3, 2) array of [quality, objectness] rows in [0, 1]
        features: one (channels, h, w) array per model level; the configured
                  scale selection picks and orders the exported subset

        Any violation raises ValueError before a single byte is written.
        """
        payload = self._build_payload(frame_index, masks, scores, features)
        self._fh.write(struct.pack("<I", len(payload)))
        self._fh.write(payload)
        self._fh.write(struct.pack("<I", zlib.crc32(payload)))
        self._last_frame = frame_index

    def _build_payload(
        self,
        frame_index: int,
        masks: Mapping[int, np.ndarray],
        scores: Mapping[int, np.ndarray],
        features: Sequence[np.ndarray],
    ) -> bytes:
        cfg = self.cfg
        if frame_index <= self._last_frame:
            raise ValueError(f"frame {frame_index} does not advance past {self._last_frame}")
        if set(masks) != set(scores):
            raise ValueError("masks and scores declare different track sets")
        unknown = set(masks) - set(cfg.tracks)
        if unknown:
            raise ValueError(f"undeclared track id(s): {sorted(unknown)}")

        indices = cfg.scale_indices or tuple(range(len(cfg.scale_shapes)))
        if max(indices, default=-1) >= len(features):
            raise ValueError(
                f"scale selection {indices} exceeds the {len(features)} provided levels"
            )
        grids = []
        for slot, level in enumerate(indices):
            grid = np.asarray(features[level], dtype="<f4")
            expected = cfg.scale_shapes[slot]
            if grid.ndim != 3 or grid.shape != (expected[2], expected[0], expected[1]):
                raise ValueError(
                    f"scale {slot}: feature shape {grid.shape} does not match "
                    f"declared (channels={expected[2]}, h={expected[0]}, w={expected[1]})"
                )
            if not np.isfinite(grid).all():
                raise ValueError(f"scale {slot}: non-finite feature values")
            grids.append(np.ascontiguousarray(grid))

        per_track = []
        for track_id in sorted(masks):
            stack = np.asarray(masks[track_id])
            if stack.shape != (3, cfg.height, cfg.width):
                raise ValueError(
                    f"track {track_id}: expected (3, {cfg.height}, {cfg.width}) "
                    f"candidate masks, got {stack.shape}"
                )
            pair = np.asarray(scores[track_id], dtype=np.float64)
            if pair.shape != (3, 2):
                raise ValueError(
                    f"track {track_id}: expected (3, 2) [quality, objectness] "
                    f"scores, got {pair.shape}"
                )
            if not np.isfinite(pair).all() or (pair < 0).any() or (pair > 1).any():
                raise ValueError(f"track {track_id}: scores must be finite in [0, 1]")
            per_track.append((track_id, stack.astype(bool), pair))

        parts = [struct.pack("<IH", frame_index, len(per_track))]
        for track_id, stack, pair in per_track:
            parts.append(struct.pack("<I", track_id))
            for k in range(3):
                runs = encode_runs(stack[k])
                parts.append(struct.pack("<I", len(runs)))
                parts.append(runs.tobytes())
                parts.append(struct.pack("<ff", float(pair[k, 0]), float(pair[k, 1])))
            for grid in grids:
                parts.append(grid.tobytes())
        return b"".join(parts)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RecordExporter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
