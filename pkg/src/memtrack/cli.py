"""Command-line surface: simulate, replay, eval, ablate, posenc-dump.

The five subcommands compose into the full desk pipeline:

    memtrack simulate --scenario s1 --seed 0 --out run.rmdi --gt-out gt/
    memtrack replay --in run.rmdi --config full --out pred/ --trace traces/
    memtrack eval --pred pred/ --gt gt/ --csv metrics.csv

Everything is deterministic per seed: identical arguments produce identical
files and CSVs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import BinaryMask, FrameMeta
from .metrics import EvalAccumulator, count_id_switches
from .posenc import piecewise_coefficients, uniform_coefficients
from .recordfile import RecordFormatError, RecordReader, StreamHeader, write_stream
from .runner import ablate, run_records
from .simulator import ScenarioScript, catalog, generate_stream, load_script
from .tracker import EngineConfig


def _resolve_script(name_or_path: str, seed: Optional[int]) -> ScenarioScript:
    scenarios = catalog()
    if name_or_path in scenarios:
        return scenarios[name_or_path].build(seed if seed is not None else 0)
    path = Path(name_or_path)
    if path.exists():
        script = load_script(path)
        if seed is not None:  # an explicit --seed overrides the script file
            script = dataclasses.replace(script, seed=seed)
        return script
    raise ValueError(
        f"unknown scenario {name_or_path!r}: not a catalog name "
        f"({', '.join(sorted(scenarios))}) and no such file"
    )


def _load_config(value: str) -> EngineConfig:
    path = Path(value)
    if path.exists():
        with open(path, "r", encoding="utf-8") as fh:
            return EngineConfig.from_dict(json.load(fh))
    return EngineConfig.from_preset(value)


def _scenario_header(script: ScenarioScript) -> StreamHeader:
    return StreamHeader(
        height=script.height,
        width=script.width,
        scales=tuple((h, w, script.channels) for h, w in script.scale_shapes()),
        classes={c: f"class{c}" for c in script.class_ids},
        tracks={c: c for c in script.class_ids},
    )


def _save_label_maps(directory: Path, maps: list[np.ndarray], classes: list[int],
                     height: int, width: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, label_map in enumerate(maps):
        np.save(directory / f"frame_{i:06d}.npy", label_map.astype(np.int32))
    meta = {"classes": classes, "height": height, "width": width, "frames": len(maps)}
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")


def _load_label_maps(directory: Path) -> tuple[list[np.ndarray], Optional[dict]]:
    files = sorted(directory.glob("frame_*.npy"))
    if not files:
        raise ValueError(f"no frame_*.npy label maps in {directory}")
    maps = [np.load(f) for f in files]
    meta_path = directory / "meta.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else None
    return maps, meta


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands


def _cmd_simulate(args) -> int:
    script = _resolve_script(args.scenario, args.seed)
    header = _scenario_header(script)
    gt_maps = []

    def frames():
        for frame, records in generate_stream(script):
            gt_maps.append(frame.label_map)
            yield frame.frame_index, records

    write_stream(args.out, header, frames())
    print(f"wrote {script.num_frames} frames to {args.out}")
    if args.gt_out:
        _save_label_maps(
            Path(args.gt_out), gt_maps, list(script.class_ids), script.height, script.width
        )
        print(f"wrote ground truth to {args.gt_out}")
    return 0


def _cmd_replay(args) -> int:
    cfg = _load_config(args.config)
    with RecordReader(args.input) as reader:
        header = reader.header
        finalized, engine = run_records(
            cfg, header.tracks, header.height, header.width, iter(reader)
        )
    out_dir = Path(args.out)
    maps = [f.label_map for f in finalized]
    classes = sorted(set(header.tracks.values()))
    _save_label_maps(out_dir, maps, classes, header.height, header.width)
    run_config = {"config": cfg.to_dict(), "config_hash": cfg.config_hash()}
    (out_dir / "run_config.json").write_text(
        json.dumps(run_config, sort_keys=True), encoding="utf-8"
    )
    if args.trace:
        trace_dir = Path(args.trace)
        trace_dir.mkdir(parents=True, exist_ok=True)
        _write_jsonl(trace_dir / "memory.jsonl", engine.memory_trace)
        _write_jsonl(trace_dir / "reid.jsonl", engine.reid_trace)
        _write_jsonl(trace_dir / "events.jsonl", engine.events)
    print(f"replayed {len(finalized)} frames into {out_dir}")
    return 0


def _class_masks(maps: list[np.ndarray], classes: list[int]) -> dict[int, dict[int, BinaryMask]]:
    out: dict[int, dict[int, BinaryMask]] = {c: {} for c in classes}
    for t, label_map in enumerate(maps):
        for c in classes:
            region = label_map == c
            if region.any():
                out[c][t] = BinaryMask.from_array(region)
    return out


def _cmd_eval(args) -> int:
    pred_maps, pred_meta = _load_label_maps(Path(args.pred))
    gt_maps, gt_meta = _load_label_maps(Path(args.gt))
    if len(pred_maps) != len(gt_maps):
        raise ValueError(f"frame count mismatch: pred {len(pred_maps)} vs gt {len(gt_maps)}")
    if args.classes:
        classes = [int(c) for c in args.classes.split(",")]
    elif pred_meta and "classes" in pred_meta:
        classes = [int(c) for c in pred_meta["classes"]]
    elif gt_meta and "classes" in gt_meta:
        classes = [int(c) for c in gt_meta["classes"]]
    else:
        raise ValueError("no class declaration: pass --classes or provide meta.json")

    acc = EvalAccumulator(classes)
    for pred, gt in zip(pred_maps, gt_maps):
        acc.accumulate(pred, gt)
    report = acc.finalize()
    switches = count_id_switches(_class_masks(pred_maps, classes), _class_masks(gt_maps, classes))

    config_hash = ""
    run_config_path = Path(args.pred) / "run_config.json"
    if run_config_path.exists():
        config_hash = json.loads(run_config_path.read_text(encoding="utf-8")).get(
            "config_hash", ""
        )

    row = {
        "config_hash": config_hash,
        "frames": len(pred_maps),
        "challenge_iou": f"{report.challenge_iou:.6f}",
        "iou": f"{report.iou:.6f}",
        "mciou": f"{report.mciou:.6f}",
        "id_switches": switches,
    }
    for c in classes:
        value = report.per_class_iou[c]
        row[f"class_{c}_iou"] = "" if value is None else f"{100 * value:.6f}"
    _write_csv(args.csv, [row])
    print(
        f"challenge_iou={report.challenge_iou:.3f} iou={report.iou:.3f} "
        f"mciou={report.mciou:.3f} id_switches={switches}"
    )
    return 0


def _cmd_ablate(args) -> int:
    scenario_names = args.scenario.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = ablate(scenario_names, seeds)
    formatted = [
        {
            **row,
            "challenge_iou": f"{row['challenge_iou']:.6f}",
            "iou": f"{row['iou']:.6f}",
            "mciou": f"{row['mciou']:.6f}",
            "id_switches": f"{row['id_switches']:.4f}",
        }
        for row in rows
    ]
    _write_csv(args.csv, formatted)
    for row in rows:
        print(f"{row['arm']:<12} mciou={row['mciou']:8.4f} id_switches={row['id_switches']:.3f}")
    return 0


def _cmd_posenc_dump(args) -> int:
    coeffs = (
        piecewise_coefficients(args.m)
        if args.scheme == "piecewise"
        else uniform_coefficients(args.m)
    )
    rows = [
        {"slot": k, "low": low, "high": high, "alpha": f"{alpha:.12g}"}
        for k, (low, high, alpha) in enumerate(coeffs)
    ]
    _write_csv(args.out, rows)
    if args.out:
        print(f"wrote {len(rows)} slots to {args.out}")
    return 0


def _write_csv(path: Optional[str], rows: list[dict]) -> None:
    if not rows:
        return
    fieldnames = list(rows[0].keys())
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memtrack",
        description="temporal-memory tracking engine: simulate, replay, evaluate",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a scenario into a record stream")
    p.add_argument("--scenario", required=True, help="catalog name or script JSON path")
    p.add_argument("--seed", type=int, default=None, help="rng seed (default 0, or the script file's own)")
    p.add_argument("--out", required=True, help="output .rmdi path")
    p.add_argument("--gt-out", help="also write ground-truth label maps here")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("replay", help="track a recorded stream")
    p.add_argument("--in", dest="input", required=True, help="input .rmdi path")
    p.add_argument("--config", default="full", help="preset name or config JSON path")
    p.add_argument("--out", required=True, help="directory for predicted label maps")
    p.add_argument("--trace", help="directory for memory/reid/event JSON-lines traces")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("eval", help="score predicted label maps against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv", help="write the metrics row here (default: stdout)")
    p.add_argument("--classes", help="comma-separated declared class ids")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the five-configuration ladder on scenarios")
    p.add_argument("--scenario", required=True, help="scenario name(s), comma-separated")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--csv", help="write comparison rows here (default: stdout)")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("posenc-dump", help="dump expansion blend coefficients as CSV")
    p.add_argument("--scheme", choices=["piecewise", "uniform"], required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=_cmd_posenc_dump)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (RecordFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
