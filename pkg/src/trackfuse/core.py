"""Shared domain types, invariant validation, and line-record serialization.

Every type here is an immutable value object. Validation never raises on
finite input: :func:`validate` returns the list of violated invariants so
callers can treat bad data as data.

Interchange format: one record per line, a self-describing JSON object whose
field names match the type definitions. Floats are emitted with 17
significant digits so decode(encode(x)) round-trips bit-exactly.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_WINDOW_LEN = 5
MAX_KEY_OBJECTS = 6


class ObjectClass(str, enum.Enum):
    CAR = "car"
    TRUCK = "truck"
    BUS = "bus"
    PEDESTRIAN = "pedestrian"
    BICYCLE = "bicycle"
    MOTORCYCLE = "motorcycle"
    OTHER = "other"


class CameraName(str, enum.Enum):
    FRONT = "front"
    FRONT_LEFT = "front_left"
    FRONT_RIGHT = "front_right"
    BACK = "back"
    BACK_LEFT = "back_left"
    BACK_RIGHT = "back_right"


class AnswerKind(str, enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    FREE_TEXT = "free_text"


class VisualSource(str, enum.Enum):
    FILE = "file"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class Pose:
    """Planar vehicle pose: 3D position, yaw about +z, and a timestamp."""

    position: tuple[float, float, float]
    heading: float  # radians, in (-pi, pi]
    timestamp: float  # seconds, monotone within a scene


@dataclass(frozen=True)
class TrajectorySample:
    timestamp: float
    position: tuple[float, float, float]
    velocity: Optional[tuple[float, float]] = None  # planar (v_x, v_y); absent if unknown


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered (position, velocity) samples for one tracked object."""

    track_id: str
    class_label: ObjectClass
    samples: tuple[TrajectorySample, ...]
    confidence: float = 1.0

    @property
    def current(self) -> TrajectorySample:
        return self.samples[-1]


@dataclass(frozen=True)
class EgoTrajectory:
    """The ego vehicle's trajectory plus its current pose."""

    samples: tuple[TrajectorySample, ...]
    current_pose: Pose

    @property
    def current(self) -> TrajectorySample:
        return self.samples[-1]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics plus the rigid ego-to-camera transform.

    Camera frame convention: z forward (optical axis), x right, y down.
    """

    name: CameraName
    intrinsics: tuple[tuple[float, float, float], ...]  # 3x3, zero skew
    rotation: tuple[tuple[float, float, float], ...]  # 3x3, ego -> camera
    translation: tuple[float, float, float]  # camera origin in ego frame
    image_size: tuple[int, int]  # (width, height) pixels

    @property
    def fx(self) -> float:
        return self.intrinsics[0][0]

    @property
    def fy(self) -> float:
        return self.intrinsics[1][1]

    @property
    def cx(self) -> float:
        return self.intrinsics[0][2]

    @property
    def cy(self) -> float:
        return self.intrinsics[1][2]


@dataclass(frozen=True)
class Box2D:
    min_corner: tuple[float, float]
    max_corner: tuple[float, float]
    score: float = 1.0

    @property
    def area(self) -> float:
        return (self.max_corner[0] - self.min_corner[0]) * (
            self.max_corner[1] - self.min_corner[1]
        )


@dataclass(frozen=True)
class PixelRef:
    """A question-referenced pixel location in one camera."""

    u: float
    v: float
    camera: CameraName


@dataclass(frozen=True)
class TrackContext:
    """The per-question bundle fed to the encoders.

    ``key_objects`` holds at most :data:`MAX_KEY_OBJECTS` trajectories,
    re-expressed in the current ego frame by the selection pipeline;
    ``object_mask`` is true exactly for occupied slots.
    """

    key_objects: tuple[Trajectory, ...]
    ego: EgoTrajectory
    object_mask: tuple[bool, ...]


@dataclass(frozen=True)
class QAItem:
    scene_id: str
    frame_id: str
    question: str
    answer: str
    answer_kind: AnswerKind
    linked_track_ids: tuple[str, ...] = ()
    image_refs: tuple[tuple[CameraName, Box2D], ...] = ()


@dataclass(frozen=True)
class ModalityWeights:
    w_traj: float = 1.0
    w_ego: float = 1.0
    w_clip: float = 1.0


@dataclass
class VisualFeatures:
    """Visual token matrix, either loaded from file or synthesized."""

    tokens: np.ndarray  # (n_tokens, d_model) float64
    source: VisualSource = VisualSource.SYNTHETIC

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VisualFeatures):
            return NotImplemented
        return self.source == other.source and np.array_equal(self.tokens, other.tokens)


# ---------------------------------------------------------------------------
# Validation


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def _validate_samples(samples: Sequence[TrajectorySample], path: str) -> list[str]:
    out = []
    for i, s in enumerate(samples):
        if not _finite(s.timestamp, *s.position):
            out.append(f"{path}[{i}]: non-finite timestamp or position")
        if s.velocity is not None and not _finite(*s.velocity):
            out.append(f"{path}[{i}].velocity: non-finite")
        if i > 0 and s.timestamp <= samples[i - 1].timestamp:
            out.append(f"{path}: samples not strictly increasing in timestamp")
            break
    return out


def validate(record: Any, *, window_len: Optional[int] = DEFAULT_WINDOW_LEN) -> list[str]:
    """Return every violated invariant of ``record`` with a field path.

    ``window_len`` caps trajectory length; pass ``None`` for full-length
    trajectories such as those stored in scene files.
    """
    v: list[str] = []
    if isinstance(record, Pose):
        if not _finite(*record.position, record.heading, record.timestamp):
            v.append("pose: non-finite field")
        elif not (-math.pi < record.heading <= math.pi):
            v.append("heading: outside (-pi, pi]")
    elif isinstance(record, Trajectory):
        n = len(record.samples)
        if n < 1:
            v.append("samples: empty")
        if window_len is not None and n > window_len:
            v.append(f"samples: length {n} exceeds window {window_len}")
        v += _validate_samples(record.samples, "samples")
        if not (math.isfinite(record.confidence) and 0.0 <= record.confidence <= 1.0):
            v.append("confidence: outside [0, 1]")
    elif isinstance(record, EgoTrajectory):
        if len(record.samples) < 1:
            v.append("samples: empty")
        v += _validate_samples(record.samples, "samples")
        v += validate(record.current_pose)
        if record.samples and record.current_pose.timestamp != record.samples[-1].timestamp:
            v.append("current_pose.timestamp: differs from last sample timestamp")
    elif isinstance(record, CameraModel):
        w, h = record.image_size
        if record.fx <= 0 or record.fy <= 0:
            v.append("intrinsics: fx and fy must be positive")
        if not (0 < record.cx < w):
            v.append("intrinsics.cx: outside (0, width)")
        if not (0 < record.cy < h):
            v.append("intrinsics.cy: outside (0, height)")
    elif isinstance(record, Box2D):
        if not _finite(*record.min_corner, *record.max_corner, record.score):
            v.append("box: non-finite field")
        else:
            if not (
                record.min_corner[0] < record.max_corner[0]
                and record.min_corner[1] < record.max_corner[1]
            ):
                v.append("box: min corner not strictly below max corner")
            if not (0.0 <= record.score <= 1.0):
                v.append("score: outside [0, 1]")
    elif isinstance(record, PixelRef):
        if not _finite(record.u, record.v) or record.u < 0 or record.v < 0:
            v.append("pixel: negative or non-finite")
    elif isinstance(record, TrackContext):
        k = len(record.key_objects)
        if k > MAX_KEY_OBJECTS:
            v.append(f"key_objects: {k} exceeds cap {MAX_KEY_OBJECTS}")
        for i, t in enumerate(record.key_objects):
            for msg in validate(t, window_len=window_len):
                v.append(f"key_objects[{i}].{msg}")
        for msg in validate(record.ego, window_len=window_len):
            v.append(f"ego.{msg}")
        expected = tuple(i < k for i in range(len(record.object_mask)))
        if record.object_mask != expected:
            v.append("object_mask: not true exactly for occupied slots")
    elif isinstance(record, QAItem):
        if record.answer_kind is AnswerKind.CATEGORICAL and record.answer not in CATEGORICAL_ANSWERS:
            v.append("answer: categorical answer outside its template's closed set")
    elif isinstance(record, ModalityWeights):
        if not _finite(record.w_traj, record.w_ego, record.w_clip):
            v.append("weights: non-finite")
    elif isinstance(record, VisualFeatures):
        if record.tokens.ndim != 2 or record.tokens.shape[0] < 1:
            v.append("tokens: need a (n_tokens >= 1, d) matrix")
        elif not np.isfinite(record.tokens).all():
            v.append("tokens: non-finite entries")
    else:
        v.append(f"unknown record type {type(record).__name__}")
    return v


#: Closed answer sets shared with the QA templates in :mod:`trackfuse.annotate`.
ACCEL_ANSWERS = ("accelerating", "decelerating", "steady")
DIRECTION_ANSWERS = ("left", "right", "straight")
CATEGORICAL_ANSWERS = frozenset(ACCEL_ANSWERS) | frozenset(DIRECTION_ANSWERS)


# ---------------------------------------------------------------------------
# Line-record serialization

_SIG_DIGITS = 17


def _fmt_float(x: float) -> str:
    s = format(float(x), f".{_SIG_DIGITS}g")
    # keep the value a float on re-parse
    if "." not in s and "e" not in s and "n" not in s and "i" not in s:
        s += ".0"
    return s


def _emit(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return json.dumps(value.value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _fmt_float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_emit(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_emit(v)}" for k, v in value.items()) + "}"
    if isinstance(value, np.ndarray):
        return _emit(value.tolist())
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps_record(record: dict) -> str:
    """Serialize a plain record dict to one JSON line (17-digit floats)."""
    return _emit(record)


def loads_record(line: str) -> dict:
    return json.loads(line)


def _sample_to_rec(s: TrajectorySample) -> dict:
    return {
        "timestamp": s.timestamp,
        "position": list(s.position),
        "velocity": None if s.velocity is None else list(s.velocity),
    }


def _sample_from_rec(r: dict) -> TrajectorySample:
    vel = r.get("velocity")
    return TrajectorySample(
        timestamp=float(r["timestamp"]),
        position=tuple(float(x) for x in r["position"]),
        velocity=None if vel is None else tuple(float(x) for x in vel),
    )


def to_record(obj: Any) -> dict:
    """Convert any core type to a self-describing plain dict."""
    if isinstance(obj, Pose):
        return {
            "kind": "pose",
            "position": list(obj.position),
            "heading": obj.heading,
            "timestamp": obj.timestamp,
        }
    if isinstance(obj, Trajectory):
        return {
            "kind": "trajectory",
            "track_id": obj.track_id,
            "class_label": obj.class_label,
            "samples": [_sample_to_rec(s) for s in obj.samples],
            "confidence": obj.confidence,
        }
    if isinstance(obj, EgoTrajectory):
        return {
            "kind": "ego_trajectory",
            "samples": [_sample_to_rec(s) for s in obj.samples],
            "current_pose": to_record(obj.current_pose),
        }
    if isinstance(obj, CameraModel):
        return {
            "kind": "camera",
            "name": obj.name,
            "intrinsics": [list(row) for row in obj.intrinsics],
            "rotation": [list(row) for row in obj.rotation],
            "translation": list(obj.translation),
            "image_size": list(obj.image_size),
        }
    if isinstance(obj, Box2D):
        return {
            "kind": "box2d",
            "min_corner": list(obj.min_corner),
            "max_corner": list(obj.max_corner),
            "score": obj.score,
        }
    if isinstance(obj, PixelRef):
        return {"kind": "pixel_ref", "u": obj.u, "v": obj.v, "camera": obj.camera}
    if isinstance(obj, TrackContext):
        return {
            "kind": "track_context",
            "key_objects": [to_record(t) for t in obj.key_objects],
            "ego": to_record(obj.ego),
            "object_mask": list(obj.object_mask),
        }
    if isinstance(obj, QAItem):
        return {
            "kind": "qa_item",
            "scene_id": obj.scene_id,
            "frame_id": obj.frame_id,
            "question": obj.question,
            "answer": obj.answer,
            "answer_kind": obj.answer_kind,
            "linked_track_ids": list(obj.linked_track_ids),
            "image_refs": [[cam, to_record(box)] for cam, box in obj.image_refs],
        }
    if isinstance(obj, ModalityWeights):
        return {
            "kind": "modality_weights",
            "w_traj": obj.w_traj,
            "w_ego": obj.w_ego,
            "w_clip": obj.w_clip,
        }
    if isinstance(obj, VisualFeatures):
        return {
            "kind": "visual_features",
            "tokens": obj.tokens,
            "source": obj.source,
        }
    raise TypeError(f"not a core type: {type(obj).__name__}")


def from_record(rec: dict) -> Any:
    kind = rec["kind"]
    if kind == "pose":
        return Pose(
            position=tuple(float(x) for x in rec["position"]),
            heading=float(rec["heading"]),
            timestamp=float(rec["timestamp"]),
        )
    if kind == "trajectory":
        return Trajectory(
            track_id=str(rec["track_id"]),
            class_label=ObjectClass(rec["class_label"]),
            samples=tuple(_sample_from_rec(s) for s in rec["samples"]),
            confidence=float(rec["confidence"]),
        )
    if kind == "ego_trajectory":
        return EgoTrajectory(
            samples=tuple(_sample_from_rec(s) for s in rec["samples"]),
            current_pose=from_record(rec["current_pose"]),
        )
    if kind == "camera":
        return CameraModel(
            name=CameraName(rec["name"]),
            intrinsics=tuple(tuple(float(x) for x in row) for row in rec["intrinsics"]),
            rotation=tuple(tuple(float(x) for x in row) for row in rec["rotation"]),
            translation=tuple(float(x) for x in rec["translation"]),
            image_size=tuple(int(x) for x in rec["image_size"]),
        )
    if kind == "box2d":
        return Box2D(
            min_corner=tuple(float(x) for x in rec["min_corner"]),
            max_corner=tuple(float(x) for x in rec["max_corner"]),
            score=float(rec["score"]),
        )
    if kind == "pixel_ref":
        return PixelRef(u=float(rec["u"]), v=float(rec["v"]), camera=CameraName(rec["camera"]))
    if kind == "track_context":
        return TrackContext(
            key_objects=tuple(from_record(t) for t in rec["key_objects"]),
            ego=from_record(rec["ego"]),
            object_mask=tuple(bool(b) for b in rec["object_mask"]),
        )
    if kind == "qa_item":
        return QAItem(
            scene_id=str(rec["scene_id"]),
            frame_id=str(rec["frame_id"]),
            question=str(rec["question"]),
            answer=str(rec["answer"]),
            answer_kind=AnswerKind(rec["answer_kind"]),
            linked_track_ids=tuple(str(t) for t in rec["linked_track_ids"]),
            image_refs=tuple(
                (CameraName(cam), from_record(box)) for cam, box in rec["image_refs"]
            ),
        )
    if kind == "modality_weights":
        return ModalityWeights(
            w_traj=float(rec["w_traj"]), w_ego=float(rec["w_ego"]), w_clip=float(rec["w_clip"])
        )
    if kind == "visual_features":
        return VisualFeatures(
            tokens=np.asarray(rec["tokens"], dtype=np.float64),
            source=VisualSource(rec["source"]),
        )
    raise ValueError(f"unknown record kind {kind!r}")


def encode(obj: Any) -> str:
    """One core object -> one text line."""
    return dumps_record(to_record(obj))


def decode(line: str) -> Any:
    return from_record(loads_record(line))


def write_records(path, objects: Iterable[Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objects:
            fh.write(encode(obj) + "\n")


def read_records(path) -> Iterator[Any]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield decode(line)
