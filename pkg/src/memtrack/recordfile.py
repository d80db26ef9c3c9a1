"""Replayable binary container for per-frame backend records (``.rmdi``).

Layout, all integers little-endian:

    header:
      magic        4 bytes  b"RMDI"
      version      u16      (currently 1)
      height       u32      frame height in pixels
      width        u32      frame width in pixels
      num_scales   u16      then per scale: h u32, w u32, channels u32
      num_classes  u16      then per entry: class_id u32, name_len u16, name utf-8
      num_tracks   u16      then per entry: track_id u32, class_id u32
    frame blocks until EOF:
      payload_len  u32
      payload:
        frame_index u32
        num_records u16     records sorted by track id, each:
          track_id u32
          3 candidates: num_runs u32, runs u32 each, quality f32, objectness f32
          per scale: channels*h*w f32 values, C-order, laid out (channels, h, w)
      crc32        u32      zlib.crc32 of the payload

Masks use the shared run-length wire layout: u32 run lengths in row-major scan
order, first run counting background pixels (possibly zero). Reading back a
written stream reproduces it bit-exactly; every block is independently
checksummed so corruption is reported with its block index.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, Mapping

import numpy as np

from .core import BinaryMask, CandidatePrediction, FeatureMap, FrameMeta, PredictionRecord

MAGIC = b"RMDI"
VERSION = 1


class RecordFormatError(ValueError):
    """Malformed stream: bad magic, version, structure, or checksum."""


@dataclass(frozen=True)
class StreamHeader:
    height: int
    width: int
    scales: tuple[tuple[int, int, int], ...]  # (h, w, channels) per scale
    classes: dict[int, str] = field(default_factory=dict)
    tracks: dict[int, int] = field(default_factory=dict)  # track_id -> class_id

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("frame dimensions must be positive")
        if not self.scales:
            raise ValueError("at least one feature scale is required")


def _pack_header(header: StreamHeader) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    parts.append(struct.pack("<II", header.height, header.width))
    parts.append(struct.pack("<H", len(header.scales)))
    for h, w, c in header.scales:
        parts.append(struct.pack("<III", h, w, c))
    parts.append(struct.pack("<H", len(header.classes)))
    for class_id in sorted(header.classes):
        name = header.classes[class_id].encode("utf-8")
        parts.append(struct.pack("<IH", class_id, len(name)) + name)
    parts.append(struct.pack("<H", len(header.tracks)))
    for track_id in sorted(header.tracks):
        parts.append(struct.pack("<II", track_id, header.tracks[track_id]))
    return b"".join(parts)


class _Cursor:
    def __init__(self, data: bytes, context: str) -> None:
        self.data = data
        self.pos = 0
        self.context = context

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise RecordFormatError(f"{self.context}: truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


class RecordWriter:
    """Sequential writer; frames must arrive with strictly increasing indices."""

    def __init__(self, path: str | Path, header: StreamHeader) -> None:
        self.header = header
        self._fh: BinaryIO = open(path, "wb")
        self._fh.write(_pack_header(header))
        self._last_frame = -1

    def write_frame(
        self, frame_index: int, records: Mapping[int, PredictionRecord]
    ) -> None:
        if frame_index <= self._last_frame:
            raise ValueError(f"frame {frame_index} does not advance past {self._last_frame}")
        payload = self._pack_payload(frame_index, records)
        self._fh.write(struct.pack("<I", len(payload)))
        self._fh.write(payload)
        self._fh.write(struct.pack("<I", zlib.crc32(payload)))
        self._last_frame = frame_index

    def _pack_payload(
        self, frame_index: int, records: Mapping[int, PredictionRecord]
    ) -> bytes:
        parts = [struct.pack("<IH", frame_index, len(records))]
        for track_id in sorted(records):
            record = records[track_id]
            self._check_record(record)
            parts.append(struct.pack("<I", track_id))
            for cand in record.candidates:
                runs = np.asarray(cand.mask.runs, dtype="<u4")
                parts.append(struct.pack("<I", len(runs)))
                parts.append(runs.tobytes())
                parts.append(struct.pack("<ff", cand.quality, cand.objectness))
            for fm in record.features:
                parts.append(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())
        return b"".join(parts)

    def _check_record(self, record: PredictionRecord) -> None:
        h, w = self.header.height, self.header.width
        if (record.frame.height, record.frame.width) != (h, w):
            raise ValueError("record frame size differs from stream header")
        if len(record.features) != len(self.header.scales):
            raise ValueError(
                f"record has {len(record.features)} scales, header declares "
                f"{len(self.header.scales)}"
            )
        for fm, (sh, sw, sc) in zip(record.features, self.header.scales):
            if (fm.channels, fm.grid_height, fm.grid_width) != (sc, sh, sw):
                raise ValueError("feature grid shape differs from stream header")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RecordWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class RecordReader:
    """Parses the header eagerly and streams frame blocks on iteration."""

    def __init__(self, path: str | Path) -> None:
        self._fh: BinaryIO = open(path, "rb")
        try:
            self.header = self._read_header()
        except Exception:
            self._fh.close()
            raise
        self._last_frame = -1
        self._block = 0

    def _read_header(self) -> StreamHeader:
        magic = self._fh.read(4)
        if magic != MAGIC:
            raise RecordFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<H", self._must_read(2, "header"))
        if version != VERSION:
            raise RecordFormatError(f"unsupported version {version}, expected {VERSION}")
        height, width = struct.unpack("<II", self._must_read(8, "header"))
        (num_scales,) = struct.unpack("<H", self._must_read(2, "header"))
        scales = tuple(
            struct.unpack("<III", self._must_read(12, "header")) for _ in range(num_scales)
        )
        (num_classes,) = struct.unpack("<H", self._must_read(2, "header"))
        classes = {}
        for _ in range(num_classes):
            class_id, name_len = struct.unpack("<IH", self._must_read(6, "header"))
            classes[class_id] = self._must_read(name_len, "header").decode("utf-8")
        (num_tracks,) = struct.unpack("<H", self._must_read(2, "header"))
        tracks = {}
        for _ in range(num_tracks):
            track_id, class_id = struct.unpack("<II", self._must_read(8, "header"))
            tracks[track_id] = class_id
        return StreamHeader(height, width, scales, classes, tracks)

    def _must_read(self, n: int, context: str) -> bytes:
        data = self._fh.read(n)
        if len(data) != n:
            raise RecordFormatError(f"{context}: truncated stream")
        return data

    def __iter__(self) -> Iterator[tuple[int, dict[int, PredictionRecord]]]:
        return self

    def __next__(self) -> tuple[int, dict[int, PredictionRecord]]:
        length_bytes = self._fh.read(4)
        if not length_bytes:
            raise StopIteration
        if len(length_bytes) != 4:
            raise RecordFormatError(f"block {self._block}: truncated length prefix")
        (length,) = struct.unpack("<I", length_bytes)
        payload = self._must_read(length, f"block {self._block}")
        (stored_crc,) = struct.unpack("<I", self._must_read(4, f"block {self._block}"))
        if zlib.crc32(payload) != stored_crc:
            raise RecordFormatError(f"block {self._block}: checksum mismatch")
        try:
            frame_index, records = self._unpack_payload(payload)
        except RecordFormatError:
            raise
        except (ValueError, struct.error) as exc:
            raise RecordFormatError(f"block {self._block}: {exc}") from exc
        if frame_index <= self._last_frame:
            raise RecordFormatError(
                f"block {self._block}: frame {frame_index} does not advance past "
                f"{self._last_frame}"
            )
        self._last_frame = frame_index
        self._block += 1
        return frame_index, records

    def _unpack_payload(self, payload: bytes) -> tuple[int, dict[int, PredictionRecord]]:
        cur = _Cursor(payload, f"block {self._block}")
        frame_index, num_records = cur.unpack("<IH")
        h, w = self.header.height, self.header.width
        meta = FrameMeta(frame_index, h, w)
        records: dict[int, PredictionRecord] = {}
        for _ in range(num_records):
            (track_id,) = cur.unpack("<I")
            candidates = []
            for _ in range(3):
                (num_runs,) = cur.unpack("<I")
                runs = np.frombuffer(cur.take(4 * num_runs), dtype="<u4")
                quality, objectness = cur.unpack("<ff")
                candidates.append(
                    CandidatePrediction(
                        BinaryMask(h, w, tuple(int(r) for r in runs)), quality, objectness
                    )
                )
            features = []
            for scale_id, (sh, sw, sc) in enumerate(self.header.scales):
                raw = cur.take(4 * sc * sh * sw)
                values = np.frombuffer(raw, dtype="<f4").reshape(sc, sh, sw)
                features.append(FeatureMap(scale_id, values))
            records[track_id] = PredictionRecord(
                track_id, meta, tuple(candidates), tuple(features)
            )
        if cur.pos != len(payload):
            raise RecordFormatError(
                f"block {self._block}: {len(payload) - cur.pos} trailing bytes"
            )
        return frame_index, records

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RecordReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_stream(
    path: str | Path,
    header: StreamHeader,
    frames: Iterator[tuple[int, Mapping[int, PredictionRecord]]],
) -> None:
    with RecordWriter(path, header) as writer:
        for frame_index, records in frames:
            writer.write_frame(frame_index, records)


def read_stream(path: str | Path) -> tuple[StreamHeader, list[tuple[int, dict[int, PredictionRecord]]]]:
    with RecordReader(path) as reader:
        return reader.header, list(reader)
