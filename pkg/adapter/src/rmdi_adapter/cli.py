"""Command-line exporter: a directory of per-frame arrays in, one ``.rmdi`` out.

Input directory convention:

    input_dir/
      meta.json           {"height": H, "width": W,
                           "scales": [[h, w, channels], ...],
                           "classes": {"1": "needle_driver", ...},
                           "tracks": {"1": 1, ...},
                           "scale_indices": [0, 1]        # optional
                          }
      frame_000000.npz    per frame, sorted by name:
        track_<id>_masks    (3, H, W) bool candidate stack
        track_<id>_scores   (3, 2) float32 [quality, objectness] rows
        features_<level>    (channels, h, w) float32, one per model level
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exporter import AdapterConfig, RecordExporter

_TRACK_RE = re.compile(r"^track_(\d+)_masks$")
_FEATURE_RE = re.compile(r"^features_(\d+)$")


def load_config(input_dir: Path) -> AdapterConfig:
    meta = json.loads((input_dir / "meta.json").read_text(encoding="utf-8"))
    indices = meta.get("scale_indices")
    return AdapterConfig(
        height=int(meta["height"]),
        width=int(meta["width"]),
        scale_shapes=tuple(tuple(int(v) for v in s) for s in meta["scales"]),
        classes={int(k): str(v) for k, v in meta.get("classes", {}).items()},
        tracks={int(k): int(v) for k, v in meta.get("tracks", {}).items()},
        scale_indices=tuple(int(i) for i in indices) if indices is not None else None,
    )


def _frame_arrays(npz: np.lib.npyio.NpzFile) -> tuple[dict, dict, list]:
    masks, scores, levels = {}, {}, {}
    for key in npz.files:
        track_match = _TRACK_RE.match(key)
        if track_match:
            tid = int(track_match.group(1))
            masks[tid] = npz[key]
            scores[tid] = npz[f"track_{tid}_scores"]
            continue
        feature_match = _FEATURE_RE.match(key)
        if feature_match:
            levels[int(feature_match.group(1))] = npz[key]
    features = [levels[i] for i in sorted(levels)]
    return masks, scores, features


def export_directory(input_dir: Path, out_path: Path) -> int:
    cfg = load_config(input_dir)
    frame_files = sorted(input_dir.glob("frame_*.npz"))
    if not frame_files:
        raise ValueError(f"no frame_*.npz files in {input_dir}")
    with RecordExporter(out_path, cfg) as exporter:
        for path in frame_files:
            frame_index = int(path.stem.split("_")[1])
            with np.load(path) as npz:
                masks, scores, features = _frame_arrays(npz)
            exporter.export_frame(frame_index, masks, scores, features)
    return len(frame_files)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="rmdi-export",
        description="package per-frame model outputs into an .rmdi record stream",
    )
    parser.add_argument("--input", required=True, help="directory of meta.json + frame_*.npz")
    parser.add_argument("--out", required=True, help="output .rmdi path")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        count = export_directory(Path(args.input), Path(args.out))
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {count} frames to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
