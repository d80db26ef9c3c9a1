"""Deterministic scripted scenes and the synthetic prediction backend.

A scenario script declares a handful of moving shapes with per-class feature
prototypes, then the backend renders what a segmentation model would report
per frame: three candidate masks with quality/objectness scores plus shared
multi-scale feature grids carrying each visible object's prototype inside its
region. Scripted confusion events make a track's record report the spatially
nearest OTHER object instead - the trap the identity verification stage has
to catch.

Everything is a pure function of (script, frame index): frames can be
generated independently and the full stream is bit-identical across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .core import (
    BinaryMask,
    CandidatePrediction,
    FeatureMap,
    FrameMeta,
    PredictionRecord,
    downsample_mask,
)

BACKGROUND_NOISE = 0.05
MAX_PROTO_COSINE = 0.8  # pairwise prototype separation unless a script overrides

# rng stream salts; frame generation stays pure per (seed, frame)
_SALT_PROTO = 11
_SALT_FEATURES = 23
_SALT_PREDICT = 37


@dataclass(frozen=True)
class PoseSegment:
    """Linear motion from (x0, y0) to (x1, y1) over [start, end], inclusive."""

    start: int
    end: int
    x0: float
    y0: float
    x1: float
    y1: float
    rx: float
    ry: float
    proto_drift: float = 0.0  # radians of appearance rotation for this segment

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"segment start {self.start} after end {self.end}")
        if self.rx <= 0 or self.ry <= 0:
            raise ValueError("segment half-extents must be positive")

    def pose_at(self, t: int) -> tuple[float, float]:
        if self.end == self.start:
            return self.x0, self.y0
        frac = (t - self.start) / (self.end - self.start)
        return self.x0 + frac * (self.x1 - self.x0), self.y0 + frac * (self.y1 - self.y0)


@dataclass(frozen=True)
class ObjectSpec:
    """One scripted object; declaration order is painter order (later occludes)."""

    class_id: int
    shape: str  # "rect" | "ellipse"
    segments: tuple[PoseSegment, ...]

    def __post_init__(self) -> None:
        if self.shape not in ("rect", "ellipse"):
            raise ValueError(f"unknown shape {self.shape!r}")
        starts = [s.start for s in self.segments]
        if starts != sorted(starts):
            raise ValueError("segments must be ordered by start frame")
        for a, b in zip(self.segments, self.segments[1:]):
            if b.start <= a.end:
                raise ValueError("segments must not overlap")

    def segment_at(self, t: int) -> Optional[PoseSegment]:
        for seg in self.segments:
            if seg.start <= t <= seg.end:
                return seg
        return None

    def last_center_before(self, t: int) -> Optional[tuple[float, float]]:
        """Center at the most recent scripted frame <= t, if any."""
        best = None
        for seg in self.segments:
            if seg.start <= t:
                best = seg.pose_at(min(t, seg.end))
        return best


@dataclass(frozen=True)
class ConfusionEvent:
    """Scripted backend failure: the track reports the nearest other object."""

    track_id: int
    start: int
    end: int
    damp: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 < self.damp <= 1.0:
            raise ValueError(f"damp must be in (0, 1], got {self.damp}")


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    num_frames: int
    height: int
    width: int
    seed: int
    objects: tuple[ObjectSpec, ...]
    confusions: tuple[ConfusionEvent, ...] = ()
    sigma_s: float = 0.02
    sigma_f: float = 0.05
    p_conf: float = 0.0
    channels: int = 16
    scale_divisors: tuple[int, ...] = (8, 16)

    def __post_init__(self) -> None:
        if self.num_frames < 1:
            raise ValueError("script needs at least one frame")
        for div in self.scale_divisors:
            if self.height % div or self.width % div:
                raise ValueError(f"canvas {self.height}x{self.width} not divisible by {div}")
        classes = [obj.class_id for obj in self.objects]
        if len(set(classes)) != len(classes):
            raise ValueError("duplicate class ids in script")
        for conf in self.confusions:
            if conf.track_id not in classes:
                raise ValueError(f"confusion targets unknown track {conf.track_id}")

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(obj.class_id for obj in self.objects)

    def scale_shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple((self.height // d, self.width // d) for d in self.scale_divisors)


@dataclass(frozen=True)
class SyntheticFrame:
    """Ground truth for one frame: label map, per-object visible masks, visibility."""

    frame_index: int
    label_map: np.ndarray
    object_masks: dict[int, BinaryMask]
    visibility: dict[int, float]
    centers: dict[int, tuple[float, float]]


def _raster(shape: str, cx: float, cy: float, rx: float, ry: float,
            xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    X = xs[None, :].astype(np.float64)
    Y = ys[:, None].astype(np.float64)
    if shape == "rect":
        return (np.abs(X - cx) <= rx) & (np.abs(Y - cy) <= ry)
    return ((X - cx) / rx) ** 2 + ((Y - cy) / ry) ** 2 <= 1.0


def _nominal_pixels(shape: str, cx: float, cy: float, rx: float, ry: float) -> int:
    # rasterize on a grid padded past the shape so canvas clipping cannot bite
    xs = np.arange(math.floor(cx - rx) - 1, math.ceil(cx + rx) + 2)
    ys = np.arange(math.floor(cy - ry) - 1, math.ceil(cy + ry) + 2)
    return int(np.count_nonzero(_raster(shape, cx, cy, rx, ry, xs, ys)))


def render(script: ScenarioScript, t: int) -> SyntheticFrame:
    """Rasterize frame t: painter's-order occlusion, off-screen objects empty."""
    if not 0 <= t < script.num_frames:
        raise ValueError(f"frame {t} outside script range 0..{script.num_frames - 1}")
    h, w = script.height, script.width
    xs = np.arange(w)
    ys = np.arange(h)
    raw: list[np.ndarray] = []
    nominal: list[int] = []
    centers: dict[int, tuple[float, float]] = {}
    for obj in script.objects:
        seg = obj.segment_at(t)
        if seg is None:
            raw.append(np.zeros((h, w), dtype=bool))
            nominal.append(0)
            continue
        cx, cy = seg.pose_at(t)
        raw.append(_raster(obj.shape, cx, cy, seg.rx, seg.ry, xs, ys))
        nominal.append(_nominal_pixels(obj.shape, cx, cy, seg.rx, seg.ry))
        centers[obj.class_id] = (cx, cy)

    label = np.zeros((h, w), dtype=np.int32)
    masks: dict[int, BinaryMask] = {}
    visibility: dict[int, float] = {}
    for i, obj in enumerate(script.objects):
        visible = raw[i].copy()
        for later in raw[i + 1 :]:
            visible &= ~later
        masks[obj.class_id] = BinaryMask.from_array(visible)
        visibility[obj.class_id] = (
            float(np.count_nonzero(visible)) / nominal[i] if nominal[i] else 0.0
        )
        label[visible] = obj.class_id
    centers = {c: centers[c] for c in centers if visibility.get(c, 0.0) > 0.0}
    return SyntheticFrame(t, label, masks, visibility, centers)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def prototypes(script: ScenarioScript) -> dict[int, list[tuple[np.ndarray, np.ndarray]]]:
    """Per class, per scale: (prototype, orthonormal drift companion).

    Prototypes of distinct classes are kept apart (|cos| <= 0.8) at every
    scale so appearance evidence stays discriminative.
    """
    rng = np.random.default_rng([script.seed, _SALT_PROTO])
    out: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
    per_scale: list[list[np.ndarray]] = [[] for _ in script.scale_divisors]
    for obj in script.objects:
        pairs = []
        for s in range(len(script.scale_divisors)):
            for _ in range(256):
                cand = _unit(rng, script.channels)
                if all(abs(float(np.dot(cand, p))) <= MAX_PROTO_COSINE for p in per_scale[s]):
                    break
            else:
                raise RuntimeError("could not separate prototypes")
            per_scale[s].append(cand)
            raw = rng.normal(size=script.channels)
            companion = raw - np.dot(raw, cand) * cand
            companion /= np.linalg.norm(companion)
            pairs.append((cand, companion))
        out[obj.class_id] = pairs
    return out


def _drifted(proto: np.ndarray, companion: np.ndarray, angle: float) -> np.ndarray:
    if angle == 0.0:
        return proto
    return math.cos(angle) * proto + math.sin(angle) * companion


def frame_features(script: ScenarioScript, frame: SyntheticFrame) -> tuple[FeatureMap, ...]:
    """Shared backbone grids for one frame: background noise plus each visible
    object's (possibly drifted) prototype painted over its cells."""
    rng = np.random.default_rng([script.seed, _SALT_FEATURES, frame.frame_index])
    protos = prototypes(script)
    maps = []
    for s, (gh, gw) in enumerate(script.scale_shapes()):
        grid = rng.normal(0.0, BACKGROUND_NOISE, size=(script.channels, gh, gw))
        for obj in script.objects:
            mask = frame.object_masks[obj.class_id]
            if mask.is_empty:
                continue
            cells = downsample_mask(mask, gh, gw)
            n = int(np.count_nonzero(cells))
            if n == 0:
                continue
            seg = obj.segment_at(frame.frame_index)
            proto, companion = protos[obj.class_id][s]
            painted = _drifted(proto, companion, seg.proto_drift if seg else 0.0)
            noise = rng.normal(0.0, script.sigma_f, size=(script.channels, n))
            grid[:, cells] = painted[:, None] + noise
        maps.append(FeatureMap(s, grid.astype(np.float32)))
    return tuple(maps)


def _shift(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(arr)
    h, w = arr.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = arr[ys_src, xs_src]
    return out


def _dilate4(arr: np.ndarray) -> np.ndarray:
    return arr | _shift(arr, 1, 0) | _shift(arr, -1, 0) | _shift(arr, 0, 1) | _shift(arr, 0, -1)


def _erode4(arr: np.ndarray) -> np.ndarray:
    return arr & _shift(arr, 1, 0) & _shift(arr, -1, 0) & _shift(arr, 0, 1) & _shift(arr, 0, -1)


def _f32(x: float) -> float:
    return float(np.float32(x))


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def _hole_variant(base: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Candidate variant: drop one interior pixel, leaving the tight box intact."""
    interior = np.argwhere(_erode4(base))
    if len(interior) == 0:
        return base.copy()
    y, x = interior[rng.integers(len(interior))]
    out = base.copy()
    out[y, x] = False
    return out


def _confusion_at(script: ScenarioScript, class_id: int, t: int) -> Optional[ConfusionEvent]:
    for conf in script.confusions:
        if conf.track_id == class_id and conf.start <= t <= conf.end:
            return conf
    return None


def _is_reentry_frame(obj: ObjectSpec, t: int) -> bool:
    seg = obj.segment_at(t)
    if seg is None or t != seg.start:
        return False
    return any(s.end < t for s in obj.segments)


def _nearest_other(
    script: ScenarioScript, frame: SyntheticFrame, class_id: int
) -> Optional[int]:
    obj = next(o for o in script.objects if o.class_id == class_id)
    ref = frame.centers.get(class_id) or obj.last_center_before(frame.frame_index)
    if ref is None:
        return None
    best = None
    best_dist = math.inf
    for other_id, center in sorted(frame.centers.items()):
        if other_id == class_id:
            continue
        dist = math.hypot(center[0] - ref[0], center[1] - ref[1])
        if dist < best_dist:
            best_dist = dist
            best = other_id
    return best


def synth_predict(
    script: ScenarioScript,
    frame: SyntheticFrame,
    features: tuple[FeatureMap, ...],
    class_id: int,
) -> PredictionRecord:
    """Backend output for one track at one frame.

    Honest records derive candidates from the object's visible mask with the
    score tied to its visibility (objectness 0 when invisible). A confusion
    event substitutes the nearest other visible object's mask, slightly
    dilated and score-damped, over the same shared feature grids.
    """
    rng = np.random.default_rng([script.seed, _SALT_PREDICT, frame.frame_index, class_id])
    meta = FrameMeta(frame.frame_index, script.height, script.width)

    source_id = class_id
    damp = 1.0
    dilated = False
    obj = next(o for o in script.objects if o.class_id == class_id)
    conf = _confusion_at(script, class_id, frame.frame_index)
    if conf is None and script.p_conf > 0.0 and _is_reentry_frame(obj, frame.frame_index):
        if rng.uniform() < script.p_conf:
            conf = ConfusionEvent(class_id, frame.frame_index, frame.frame_index)
    if conf is not None:
        other = _nearest_other(script, frame, class_id)
        if other is not None:
            source_id, damp, dilated = other, conf.damp, True

    base = frame.object_masks[source_id].to_array()
    vis = frame.visibility[source_id]
    if dilated:
        base = _dilate4(base)

    jitter = float(rng.normal(0.0, script.sigma_s))
    if vis <= 0.0 or not base.any():
        empty = BinaryMask.empty(script.height, script.width)
        c0 = _f32(_clamp01(-jitter))
        cands = tuple(
            CandidatePrediction(empty, _f32(_clamp01(c0 - 0.02 * i)), 0.0) for i in range(3)
        )
        return PredictionRecord(class_id, meta, cands, features)

    c0 = _clamp01(damp * _clamp01(vis - jitter))
    s0 = _clamp01(damp * _clamp01(vis + jitter))
    masks = [base, _hole_variant(base, rng), _hole_variant(base, rng)]
    cands = tuple(
        CandidatePrediction(
            BinaryMask.from_array(m), _f32(_clamp01(c0 - 0.02 * i)), _f32(s0)
        )
        for i, m in enumerate(masks)
    )
    return PredictionRecord(class_id, meta, cands, features)


def generate_frame(
    script: ScenarioScript, t: int
) -> tuple[SyntheticFrame, dict[int, PredictionRecord]]:
    """Everything for frame t: ground truth plus one record per declared track."""
    frame = render(script, t)
    features = frame_features(script, frame)
    records = {
        obj.class_id: synth_predict(script, frame, features, obj.class_id)
        for obj in script.objects
    }
    return frame, records


def generate_stream(
    script: ScenarioScript,
) -> Iterator[tuple[SyntheticFrame, dict[int, PredictionRecord]]]:
    for t in range(script.num_frames):
        yield generate_frame(script, t)


# ---------------------------------------------------------------------------
# scenario catalog


@dataclass(frozen=True)
class Scenario:
    """Named deterministic scenario plus the engine events it must provoke."""

    name: str
    description: str
    builder: Callable[[int], ScenarioScript]
    expected_events: tuple[tuple[str, int, int], ...]  # (event, track, frame) under full config

    def build(self, seed: int) -> ScenarioScript:
        return self.builder(seed)


def _seg(start, end, at, rx, ry, to=None, drift=0.0) -> PoseSegment:
    x0, y0 = at
    x1, y1 = to if to is not None else at
    return PoseSegment(start, end, x0, y0, x1, y1, rx, ry, drift)


def _s1(seed: int) -> ScenarioScript:
    return ScenarioScript(
        name="s1",
        num_frames=45,
        height=96,
        width=128,
        seed=seed,
        objects=(
            ObjectSpec(1, "rect", (_seg(0, 44, (32, 24), 14, 10, to=(40, 32)),)),
            ObjectSpec(
                2,
                "ellipse",
                (
                    _seg(0, 14, (92, 64), 16, 12, to=(96, 68)),
                    _seg(25, 44, (84, 44), 16, 12, to=(76, 40)),
                ),
            ),
        ),
    )


def _s2(seed: int) -> ScenarioScript:
    return ScenarioScript(
        name="s2",
        num_frames=50,
        height=96,
        width=128,
        seed=seed,
        objects=(
            ObjectSpec(1, "rect", (_seg(0, 49, (28, 28), 14, 10),)),
            ObjectSpec(2, "ellipse", (_seg(0, 19, (92, 64), 16, 12, to=(96, 66)),)),
            ObjectSpec(3, "rect", (_seg(30, 49, (88, 56), 14, 12, to=(92, 60)),)),
        ),
        confusions=(ConfusionEvent(2, 30, 49, damp=0.9),),
    )


def _s3(seed: int) -> ScenarioScript:
    return ScenarioScript(
        name="s3",
        num_frames=50,
        height=96,
        width=128,
        seed=seed,
        objects=(
            ObjectSpec(1, "rect", (_seg(0, 49, (60, 48), 16, 12, to=(68, 52)),)),
            ObjectSpec(2, "ellipse", (_seg(0, 14, (100, 72), 14, 10, to=(104, 76)),)),
        ),
        confusions=(ConfusionEvent(2, 17, 49, damp=0.9),),
    )


def _s4(seed: int) -> ScenarioScript:
    return ScenarioScript(
        name="s4",
        num_frames=50,
        height=96,
        width=128,
        seed=seed,
        objects=(
            ObjectSpec(
                1,
                "rect",
                (
                    _seg(0, 19, (36, 28), 14, 10),
                    _seg(28, 49, (80, 60), 18, 8, to=(88, 64), drift=0.35),
                ),
            ),
            ObjectSpec(
                2,
                "ellipse",
                (
                    _seg(0, 19, (92, 68), 12, 12),
                    _seg(28, 49, (24, 72), 10, 14, to=(20, 68), drift=0.35),
                ),
            ),
            ObjectSpec(3, "rect", (_seg(0, 49, (68, 16), 12, 8, to=(72, 20)),)),
        ),
    )


def _s5(seed: int) -> ScenarioScript:
    script = ScenarioScript(
        name="s5",
        num_frames=45,
        height=96,
        width=128,
        seed=seed,
        objects=(
            ObjectSpec(1, "rect", (_seg(0, 44, (32, 60), 14, 10, to=(36, 64)),)),
            ObjectSpec(
                2,
                "rect",
                (
                    _seg(0, 9, (100, 48), 12, 10),
                    _seg(10, 14, (108, 48), 12, 10, to=(124, 48)),
                    _seg(20, 44, (96, 52), 12, 10, to=(92, 48)),
                ),
            ),
        ),
    )
    _assert_low_visibility_band(script, class_id=2, frames=range(10, 15))
    return script


def _assert_low_visibility_band(
    script: ScenarioScript,
    class_id: int,
    frames,
    lo: float = 0.65,
    hi: float = 0.95,
) -> None:
    """The pre-occlusion slide must yield at least one frame whose reliability
    lands in the relaxed band [lo, hi) - the region only the occlusion-aware
    memory can retain."""
    for t in frames:
        frame, records = generate_frame(script, t)
        r = records[class_id].reliability
        if lo <= r < hi:
            return
    raise AssertionError(f"scenario {script.name}: no pre-occlusion frame with r in [{lo}, {hi})")


def catalog() -> dict[str, Scenario]:
    """The named scenario suite. Events listed are required under the full config."""
    return {
        "s1": Scenario(
            "s1",
            "single occlusion and honest re-entry; recovery must accept",
            _s1,
            (
                ("occlusion_start", 2, 15),
                ("recovery_start", 2, 25),
                ("reid_accept", 2, 29),
            ),
        ),
        "s2": Scenario(
            "s2",
            "turnover: one object exits, a different class enters; the exited "
            "track's records chase the newcomer",
            _s2,
            (
                ("occlusion_start", 2, 20),
                ("recovery_start", 2, 30),
                ("reid_reassign", 2, 34),
                ("withdrawal", 2, 34),
            ),
        ),
        "s3": Scenario(
            "s3",
            "post-exit hallucination: after leaving, the track's records lock "
            "onto the remaining object",
            _s3,
            (
                ("occlusion_start", 2, 15),
                ("recovery_start", 2, 17),
                ("reid_reassign", 2, 21),
                ("withdrawal", 2, 21),
            ),
        ),
        "s4": Scenario(
            "s4",
            "two objects exit together and re-enter elsewhere with pose and "
            "appearance drift; recovery must still accept",
            _s4,
            (
                ("occlusion_start", 1, 20),
                ("occlusion_start", 2, 20),
                ("recovery_start", 1, 28),
                ("recovery_start", 2, 28),
                ("reid_accept", 1, 32),
                ("reid_accept", 2, 32),
            ),
        ),
        "s5": Scenario(
            "s5",
            "low-visibility slide-out before occlusion; those frames only fit "
            "the relaxed occlusion threshold",
            _s5,
            (
                ("occlusion_start", 2, 15),
                ("recovery_start", 2, 20),
                ("reid_accept", 2, 24),
            ),
        ),
    }


# ---------------------------------------------------------------------------
# script (de)serialization - the human-readable scenario file format


def script_to_dict(script: ScenarioScript) -> dict:
    return {
        "name": script.name,
        "frames": script.num_frames,
        "height": script.height,
        "width": script.width,
        "seed": script.seed,
        "sigma_s": script.sigma_s,
        "sigma_f": script.sigma_f,
        "p_conf": script.p_conf,
        "channels": script.channels,
        "scale_divisors": list(script.scale_divisors),
        "objects": [
            {
                "class_id": obj.class_id,
                "shape": obj.shape,
                "segments": [
                    {
                        "start": s.start,
                        "end": s.end,
                        "from": [s.x0, s.y0],
                        "to": [s.x1, s.y1],
                        "rx": s.rx,
                        "ry": s.ry,
                        "proto_drift": s.proto_drift,
                    }
                    for s in obj.segments
                ],
            }
            for obj in script.objects
        ],
        "confusions": [
            {"track": c.track_id, "start": c.start, "end": c.end, "damp": c.damp}
            for c in script.confusions
        ],
    }


def script_from_dict(data: dict) -> ScenarioScript:
    objects = tuple(
        ObjectSpec(
            int(o["class_id"]),
            o["shape"],
            tuple(
                PoseSegment(
                    int(s["start"]),
                    int(s["end"]),
                    float(s["from"][0]),
                    float(s["from"][1]),
                    float(s.get("to", s["from"])[0]),
                    float(s.get("to", s["from"])[1]),
                    float(s["rx"]),
                    float(s["ry"]),
                    float(s.get("proto_drift", 0.0)),
                )
                for s in o["segments"]
            ),
        )
        for o in data["objects"]
    )
    confusions = tuple(
        ConfusionEvent(int(c["track"]), int(c["start"]), int(c["end"]), float(c.get("damp", 0.9)))
        for c in data.get("confusions", ())
    )
    return ScenarioScript(
        name=data.get("name", "custom"),
        num_frames=int(data["frames"]),
        height=int(data["height"]),
        width=int(data["width"]),
        seed=int(data.get("seed", 0)),
        objects=objects,
        confusions=confusions,
        sigma_s=float(data.get("sigma_s", 0.02)),
        sigma_f=float(data.get("sigma_f", 0.05)),
        p_conf=float(data.get("p_conf", 0.0)),
        channels=int(data.get("channels", 16)),
        scale_divisors=tuple(int(d) for d in data.get("scale_divisors", (8, 16))),
    )


def load_script(path: str | Path) -> ScenarioScript:
    with open(path, "r", encoding="utf-8") as fh:
        return script_from_dict(json.load(fh))


def save_script(script: ScenarioScript, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(script_to_dict(script), fh, indent=2, sort_keys=True)
