"""Scenario replay helpers shared by the CLI, the ablation grid, and the tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np

from .core import BinaryMask, FrameMeta, PredictionRecord
from .metrics import EvalAccumulator, MetricsReport, count_id_switches
from .simulator import ScenarioScript, catalog, generate_stream
from .tracker import EngineConfig, FinalizedFrame, TrackingEngine, ablation_arms


@dataclass
class ScenarioRun:
    script: ScenarioScript
    finalized: list[FinalizedFrame]
    gt_maps: list[np.ndarray]
    gt_masks: dict[int, dict[int, BinaryMask]]
    engine: TrackingEngine


@dataclass(frozen=True)
class EvalResult:
    report: MetricsReport
    id_switches: int


def run_records(
    cfg: EngineConfig,
    track_classes: Mapping[int, int],
    height: int,
    width: int,
    frames: Iterable[tuple[int, Mapping[int, PredictionRecord]]],
) -> tuple[list[FinalizedFrame], TrackingEngine]:
    """Feed (frame_index, records) pairs through a fresh engine; order preserved."""
    engine = TrackingEngine(cfg, track_classes, height, width)
    finalized: list[FinalizedFrame] = []
    for frame_index, records in frames:
        finalized.extend(engine.process_frame(FrameMeta(frame_index, height, width), records))
    finalized.extend(engine.finish())
    return finalized, engine


def run_scenario(script: ScenarioScript, cfg: EngineConfig) -> ScenarioRun:
    """Generate a scenario stream and track it end to end."""
    engine = TrackingEngine(
        cfg, {c: c for c in script.class_ids}, script.height, script.width
    )
    finalized: list[FinalizedFrame] = []
    gt_maps: list[np.ndarray] = []
    gt_masks: dict[int, dict[int, BinaryMask]] = {c: {} for c in script.class_ids}
    for frame, records in generate_stream(script):
        gt_maps.append(frame.label_map)
        for class_id, mask in frame.object_masks.items():
            if not mask.is_empty:
                gt_masks[class_id][frame.frame_index] = mask
        meta = FrameMeta(frame.frame_index, script.height, script.width)
        finalized.extend(engine.process_frame(meta, records))
    finalized.extend(engine.finish())
    return ScenarioRun(script, finalized, gt_maps, gt_masks, engine)


def evaluate_run(run: ScenarioRun) -> EvalResult:
    if len(run.finalized) != run.script.num_frames:
        raise RuntimeError(
            f"finalized {len(run.finalized)} of {run.script.num_frames} frames"
        )
    acc = EvalAccumulator(run.script.class_ids)
    for frame in run.finalized:
        acc.accumulate(frame.label_map, run.gt_maps[frame.frame_index])
    switches = count_id_switches(run.engine.track_outputs, run.gt_masks)
    return EvalResult(acc.finalize(), switches)


def ablate(
    scenario_names: Iterable[str],
    seeds: Iterable[int],
    arms: Optional[list[tuple[str, EngineConfig]]] = None,
) -> list[dict]:
    """Run the configuration ladder over a scenario/seed grid.

    Returns one row per arm with metric means over all (scenario, seed) runs.
    """
    names = list(scenario_names)
    seed_list = list(seeds)
    scenarios = catalog()
    unknown = [n for n in names if n not in scenarios]
    if unknown:
        raise ValueError(f"unknown scenario(s): {unknown}")
    rows = []
    for arm_name, cfg in arms if arms is not None else ablation_arms():
        mciou, challenge, iou, switches = [], [], [], []
        for name in names:
            for seed in seed_list:
                script = scenarios[name].build(seed)
                result = evaluate_run(run_scenario(script, cfg))
                mciou.append(result.report.mciou)
                challenge.append(result.report.challenge_iou)
                iou.append(result.report.iou)
                switches.append(result.id_switches)
        rows.append(
            {
                "arm": arm_name,
                "scenarios": "+".join(names),
                "seeds": ",".join(str(s) for s in seed_list),
                "runs": len(mciou),
                "memory_size": cfg.memory_size,
                "tau_rel": cfg.tau_rel,
                "tau_occ": cfg.tau_occ if cfg.enable_occ_memory else "",
                "enable_reid": cfg.enable_reid,
                "enable_occ_memory": cfg.enable_occ_memory,
                "challenge_iou": float(np.mean(challenge)),
                "iou": float(np.mean(iou)),
                "mciou": float(np.mean(mciou)),
                "id_switches": float(np.mean(switches)),
            }
        )
    return rows
