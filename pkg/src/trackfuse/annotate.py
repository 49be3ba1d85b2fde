"""Automated QA annotation: trajectory attributes and template question/answer
records for pretraining.

Attribute definitions: average speed is planar path length over elapsed time;
acceleration status compares the first and last window speeds against a
dead band; relative direction classifies the window displacement expressed
in the current ego frame. Thresholds are configurable and echoed into every
corpus file header.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import scenegen, track_context
from .core import (
    AnswerKind,
    Box2D,
    CameraName,
    EgoTrajectory,
    QAItem,
    Trajectory,
    dumps_record,
    from_record,
    loads_record,
    to_record,
)
from .track_context import SelectionConfig
from .traj_encoder import _sample_velocity


class TooFewSamples(ValueError):
    pass


class EmptyPatch(ValueError):
    pass


class IoFailure(OSError):
    pass


@dataclass(frozen=True)
class AnnotateConfig:
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    accel_eps: float = 0.5  # m/s
    angle_thresh_deg: float = 15.0
    still_thresh: float = 0.2  # m/s
    predict_dt: float = 0.5  # seconds

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AttributeReport:
    avg_speed: float
    accel_status: str  # accelerating | decelerating | steady
    direction: Optional[str]  # left | right | straight; None for ego
    predicted_position: tuple[float, float]
    color: Optional[str] = None


def avg_speed(t: Trajectory | EgoTrajectory) -> float:
    """Total planar path length divided by elapsed time."""
    samples = t.samples
    if len(samples) < 2:
        raise TooFewSamples("average speed needs at least 2 samples")
    length = 0.0
    for a, b in zip(samples, samples[1:]):
        length += math.hypot(b.position[0] - a.position[0], b.position[1] - a.position[1])
    return length / (samples[-1].timestamp - samples[0].timestamp)


def accel_status(t: Trajectory | EgoTrajectory, eps: float = 0.5) -> str:
    samples = t.samples
    if len(samples) < 2:
        raise TooFewSamples("acceleration status needs at least 2 samples")
    first = math.hypot(*_sample_velocity(samples, 0))
    last = math.hypot(*_sample_velocity(samples, len(samples) - 1))
    delta = last - first
    if delta > eps:
        return "accelerating"
    if delta < -eps:
        return "decelerating"
    return "steady"


def relative_direction(
    t: Trajectory,
    ego: EgoTrajectory,
    angle_thresh: float = 15.0,
    still_thresh: float = 0.2,
) -> str:
    """left/right/straight from the window displacement in the ego frame
    (x forward, y left). Near-stationary objects count as straight."""
    samples = t.samples
    if len(samples) < 2:
        raise TooFewSamples("direction needs at least 2 samples")
    dx = samples[-1].position[0] - samples[0].position[0]
    dy = samples[-1].position[1] - samples[0].position[1]
    elapsed = samples[-1].timestamp - samples[0].timestamp
    if math.hypot(dx, dy) / elapsed < still_thresh:
        return "straight"
    h = ego.current_pose.heading
    c, s = math.cos(-h), math.sin(-h)
    theta = math.degrees(math.atan2(s * dx + c * dy, c * dx - s * dy))
    if theta > angle_thresh:
        return "left"
    if theta < -angle_thresh:
        return "right"
    return "straight"


def predict_future(t: Trajectory | EgoTrajectory, dt: float = 0.5) -> tuple[float, float]:
    """Constant-velocity extrapolation of the planar position."""
    samples = t.samples
    if len(samples) == 0 or (len(samples) == 1 and samples[0].velocity is None):
        raise TooFewSamples("future prediction needs a velocity or 2 samples")
    vx, vy = _sample_velocity(samples, len(samples) - 1)
    last = samples[-1]
    return (last.position[0] + vx * dt, last.position[1] + vy * dt)


def dominant_color(patch: np.ndarray, palette: Optional[dict] = None) -> str:
    """Snap every pixel to the nearest palette color; the mode wins, with
    ties broken by palette order."""
    if patch.size == 0:
        raise EmptyPatch("empty pixel patch")
    palette = palette or scenegen.DEFAULT_PALETTE
    names = list(palette.keys())
    colors = np.array([palette[n] for n in names], dtype=np.float64)
    flat = patch.reshape(-1, 3).astype(np.float64)
    dists = ((flat[:, None, :] - colors[None, :, :]) ** 2).sum(axis=2)
    nearest = dists.argmin(axis=1)
    counts = np.bincount(nearest, minlength=len(names))
    return names[int(counts.argmax())]


# ---------------------------------------------------------------------------
# Template QA generation

OBJECT_TEMPLATES = {
    "speed": "What is the average speed of the {desc} along this trajectory?",
    "accel": "Is the {desc} accelerating, decelerating, or maintaining a steady speed along its path?",
    "direction": "Is the {desc} going left, right, or straight with respect to the ego vehicle?",
    "future": "What is the predicted position of the {desc} after the last observed point?",
}

EGO_TEMPLATES = {
    "speed": "What is the average speed of the ego vehicle along this trajectory?",
    "accel": "Is the ego vehicle accelerating, decelerating, or maintaining a steady speed along its path?",
    "future": "What is the predicted position of the ego vehicle after the last observed point?",
}


def _fmt_speed(v: float) -> str:
    return f"{v:.2f} m/s"


def _fmt_position(p: tuple[float, float]) -> str:
    return f"({p[0]:.2f}, {p[1]:.2f})"


def compute_report(
    t: Trajectory,
    ego: EgoTrajectory,
    cfg: AnnotateConfig = AnnotateConfig(),
    color: Optional[str] = None,
) -> AttributeReport:
    return AttributeReport(
        avg_speed=avg_speed(t),
        accel_status=accel_status(t, cfg.accel_eps),
        direction=relative_direction(t, ego, cfg.angle_thresh_deg, cfg.still_thresh),
        predicted_position=predict_future(t, cfg.predict_dt),
        color=color,
    )


def _object_refs_and_color(
    scene: scenegen.Scene, obj: scenegen.SceneObject, frame: int
) -> tuple[Optional[str], tuple]:
    """Dominant color from the best visible rendering, plus image references."""
    ego_pose = scene.ego_pose(frame)
    best = track_context.best_projection(
        Trajectory(
            obj.trajectory.track_id,
            obj.trajectory.class_label,
            obj.trajectory.samples[: frame + 1],
            obj.trajectory.confidence,
        ),
        ego_pose,
        scene.cameras,
    )
    if best is None:
        return None, ()
    cam_name, _ = best
    patch, box = scenegen.render_patch(scene, obj, frame, scene.cameras[cam_name])
    return dominant_color(patch, scene.config.palette_dict()), ((cam_name, box),)


def generate_qa(
    scene: scenegen.Scene, frame: int, cfg: AnnotateConfig = AnnotateConfig()
) -> list[QAItem]:
    """Template QAs for every key object at ``frame`` plus the ego vehicle."""
    if not 0 <= frame < len(scene.frame_times):
        raise IndexError(f"frame {frame} outside scene")
    tracks = scene.tracks_up_to(frame)
    ego = scene.ego_up_to(frame)
    ctx = track_context.build_context(tracks, ego, None, scene.cameras, cfg.selection)

    window = cfg.selection.window_len
    items: list[QAItem] = []
    for rel in ctx.key_objects:
        obj = scene.object_by_id(rel.track_id)
        world = Trajectory(
            rel.track_id,
            obj.trajectory.class_label,
            obj.trajectory.samples[: frame + 1][-window:],
            obj.trajectory.confidence,
        )
        color, image_refs = _object_refs_and_color(scene, obj, frame)
        report = compute_report(world, ego, cfg, color)
        desc = f"{color} {obj.trajectory.class_label.value}" if color else obj.trajectory.class_label.value
        answers = {
            "speed": (_fmt_speed(report.avg_speed), AnswerKind.NUMERIC),
            "accel": (report.accel_status, AnswerKind.CATEGORICAL),
            "direction": (report.direction, AnswerKind.CATEGORICAL),
            "future": (_fmt_position(report.predicted_position), AnswerKind.NUMERIC),
        }
        for key, template in OBJECT_TEMPLATES.items():
            answer, kind = answers[key]
            items.append(
                QAItem(
                    scene_id=scene.scene_id,
                    frame_id=str(frame),
                    question=template.format(desc=desc),
                    answer=answer,
                    answer_kind=kind,
                    linked_track_ids=(rel.track_id,),
                    image_refs=image_refs,
                )
            )

    ego_window = EgoTrajectory(ego.samples[-window:], ego.current_pose)
    ego_answers = {
        "speed": (_fmt_speed(avg_speed(ego_window)), AnswerKind.NUMERIC),
        "accel": (accel_status(ego_window, cfg.accel_eps), AnswerKind.CATEGORICAL),
        "future": (_fmt_position(predict_future(ego_window, cfg.predict_dt)), AnswerKind.NUMERIC),
    }
    for key, question in EGO_TEMPLATES.items():
        answer, kind = ego_answers[key]
        items.append(
            QAItem(
                scene_id=scene.scene_id,
                frame_id=str(frame),
                question=question,
                answer=answer,
                answer_kind=kind,
                linked_track_ids=("ego",),
            )
        )
    return items


# ---------------------------------------------------------------------------
# Corpus files


def export_qa(items: Sequence[QAItem], path, cfg: AnnotateConfig = AnnotateConfig()) -> None:
    """One header record with the generator configuration, then one record
    per item; round-trip safe."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_record({"kind": "qa_corpus_header", "generator_config": cfg.to_dict()}) + "\n")
            for item in items:
                fh.write(dumps_record(to_record(item)) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def import_qa(path) -> tuple[list[QAItem], dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line.strip() for line in fh if line.strip()]
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if not lines:
        raise IoFailure(f"{path}: empty corpus file")
    header = loads_record(lines[0])
    if header.get("kind") != "qa_corpus_header":
        raise IoFailure(f"{path}: missing corpus header")
    items = [from_record(loads_record(line)) for line in lines[1:]]
    return items, header["generator_config"]
