"""Key-object selection: from all scene tracks to the encoder-ready context.

Pipeline: confidence/window filtering, projected-box NMS deduplication,
interest-object matching, nearest-neighbour fill, and re-expression of every
trajectory in the current ego frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import geometry
from .core import (
    Box2D,
    CameraModel,
    CameraName,
    EgoTrajectory,
    ObjectClass,
    PixelRef,
    Pose,
    TrackContext,
    Trajectory,
    TrajectorySample,
)


class DegenerateScene(ValueError):
    """Raised when the ego trajectory carries no samples."""


@dataclass(frozen=True)
class SelectionConfig:
    window_len: int = 5
    conf_min: float = 0.3
    nms_iou: float = 0.1
    max_key_objects: int = 6
    max_interest_objects: int = 6

    def __post_init__(self):
        if self.window_len < 1 or self.max_key_objects < 1 or self.max_interest_objects < 1:
            raise ValueError("window_len and object caps must be >= 1")
        if not (0.0 <= self.conf_min <= 1.0 and 0.0 <= self.nms_iou <= 1.0):
            raise ValueError("thresholds must lie in [0, 1]")


# Nominal projected-box edge lengths in pixels at 1600-wide images; the
# boxes only need to overlap consistently, absolute size is immaterial
# at the 0.1 IoU threshold.
BOX_EDGE_PX = {
    ObjectClass.CAR: 60.0,
    ObjectClass.TRUCK: 80.0,
    ObjectClass.BUS: 90.0,
    ObjectClass.PEDESTRIAN: 24.0,
    ObjectClass.BICYCLE: 30.0,
    ObjectClass.MOTORCYCLE: 30.0,
    ObjectClass.OTHER: 40.0,
}
_REF_IMAGE_WIDTH = 1600.0


def box_edge_px(class_label: ObjectClass, cam: CameraModel) -> float:
    return BOX_EDGE_PX[class_label] * cam.image_size[0] / _REF_IMAGE_WIDTH


def filter_tracks(tracks: Sequence[Trajectory], cfg: SelectionConfig) -> list[Trajectory]:
    """Drop low-confidence tracks and truncate to the most recent window."""
    out = []
    for t in tracks:
        if t.confidence < cfg.conf_min:
            continue
        samples = t.samples[-cfg.window_len :]
        out.append(Trajectory(t.track_id, t.class_label, samples, t.confidence))
    return out


def projected_box(
    track: Trajectory, ego_pose: Pose, cam: CameraModel
) -> Optional[Box2D]:
    """Fixed-size square around the track's projected current position,
    clipped to the image; None when not visible in this camera."""
    res = geometry.project(track.current.position, ego_pose, cam)
    if res.pixel is None:
        return None
    half = box_edge_px(track.class_label, cam) / 2.0
    u, v = res.pixel
    w, h = cam.image_size
    lo = (max(u - half, 0.0), max(v - half, 0.0))
    hi = (min(u + half, float(w)), min(v + half, float(h)))
    if lo[0] >= hi[0] or lo[1] >= hi[1]:
        return None
    return Box2D(min_corner=lo, max_corner=hi, score=track.confidence)


def best_projection(
    track: Trajectory, ego_pose: Pose, cameras: Mapping[CameraName, CameraModel]
) -> Optional[tuple[CameraName, Box2D]]:
    """The visible projection whose clipped box has the largest area."""
    best = None
    for name in sorted(cameras, key=lambda n: n.value):
        box = projected_box(track, ego_pose, cameras[name])
        if box is not None and (best is None or box.area > best[1].area):
            best = (name, box)
    return best


def dedupe_by_nms(
    tracks: Sequence[Trajectory],
    ego_pose: Pose,
    cameras: Mapping[CameraName, CameraModel],
    cfg: SelectionConfig,
) -> list[Trajectory]:
    """Suppress tracks whose projected boxes overlap a higher-confidence one.

    NMS runs per camera on each track's best projection; tracks visible in
    no camera are kept unconditionally.
    """
    per_camera: dict[CameraName, list[tuple[int, Box2D]]] = {}
    kept = [True] * len(tracks)
    for i, t in enumerate(tracks):
        proj = best_projection(t, ego_pose, cameras)
        if proj is not None:
            per_camera.setdefault(proj[0], []).append((i, proj[1]))
    for entries in per_camera.values():
        boxes = [box for _, box in entries]
        surviving = set(geometry.nms(boxes, cfg.nms_iou))
        for pos, (i, _) in enumerate(entries):
            if pos not in surviving:
                kept[i] = False
    return [t for i, t in enumerate(tracks) if kept[i]]


def _planar_distance(track: Trajectory, ego: EgoTrajectory) -> float:
    dx = track.current.position[0] - ego.current.position[0]
    dy = track.current.position[1] - ego.current.position[1]
    return math.hypot(dx, dy)


def select_key_objects(
    tracks: Sequence[Trajectory], ego: EgoTrajectory, cfg: SelectionConfig
) -> list[Trajectory]:
    """The up-to-m tracks nearest the current ego position, ascending."""
    ranked = sorted(tracks, key=lambda t: (_planar_distance(t, ego), t.track_id))
    return ranked[: cfg.max_key_objects]


def match_interest_objects(
    refs: Sequence[PixelRef],
    tracks: Sequence[Trajectory],
    ego_pose: Pose,
    cameras: Mapping[CameraName, CameraModel],
) -> list[tuple[PixelRef, Optional[Trajectory]]]:
    """Match each pixel reference to the track projecting nearest to it.

    Only the reference's own camera is searched; a reference in a camera
    where no track is visible matches None.
    """
    out = []
    for ref in refs:
        cam = cameras[ref.camera]
        best: Optional[tuple[float, str, Trajectory]] = None
        for t in tracks:
            res = geometry.project(t.current.position, ego_pose, cam)
            if res.pixel is None:
                continue
            d = math.hypot(res.pixel[0] - ref.u, res.pixel[1] - ref.v)
            if best is None or (d, t.track_id) < (best[0], best[1]):
                best = (d, t.track_id, t)
        out.append((ref, None if best is None else best[2]))
    return out


def to_ego_frame_trajectory(t: Trajectory, ego_pose: Pose) -> Trajectory:
    """Rigidly re-express a trajectory in the current ego frame."""
    samples = []
    for s in t.samples:
        pos = geometry.world_to_ego(np.asarray(s.position), ego_pose)
        vel = s.velocity
        if vel is not None:
            c, si = math.cos(-ego_pose.heading), math.sin(-ego_pose.heading)
            vel = (c * vel[0] - si * vel[1], si * vel[0] + c * vel[1])
        samples.append(TrajectorySample(s.timestamp, tuple(float(x) for x in pos), vel))
    return Trajectory(t.track_id, t.class_label, tuple(samples), t.confidence)


def to_ego_frame_ego(ego: EgoTrajectory) -> EgoTrajectory:
    pose = ego.current_pose
    as_track = Trajectory("ego", ObjectClass.OTHER, ego.samples, 1.0)
    rel = to_ego_frame_trajectory(as_track, pose)
    return EgoTrajectory(
        samples=rel.samples,
        current_pose=Pose(position=(0.0, 0.0, 0.0), heading=0.0, timestamp=pose.timestamp),
    )


def build_context(
    all_tracks: Sequence[Trajectory],
    ego: EgoTrajectory,
    refs: Optional[Sequence[PixelRef]],
    cameras: Mapping[CameraName, CameraModel],
    cfg: SelectionConfig = SelectionConfig(),
) -> TrackContext:
    """Full selection pipeline producing the per-question TrackContext.

    Interest-object matches take precedence over pure nearest-distance fill;
    all output positions and velocities are ego-relative.
    """
    if len(ego.samples) == 0:
        raise DegenerateScene("ego trajectory has no samples")
    if refs is not None and len(refs) > cfg.max_interest_objects:
        raise ValueError(
            f"{len(refs)} interest references exceed cap {cfg.max_interest_objects}"
        )
    ego = EgoTrajectory(ego.samples[-cfg.window_len :], ego.current_pose)
    ego_pose = ego.current_pose

    candidates = filter_tracks(all_tracks, cfg)
    candidates = dedupe_by_nms(candidates, ego_pose, cameras, cfg)

    selected: list[Trajectory] = []
    chosen_ids: set[str] = set()
    if refs:
        for _, match in match_interest_objects(refs, candidates, ego_pose, cameras):
            if match is not None and match.track_id not in chosen_ids:
                selected.append(match)
                chosen_ids.add(match.track_id)
    selected = selected[: cfg.max_key_objects]
    for t in select_key_objects(candidates, ego, cfg):
        if len(selected) >= cfg.max_key_objects:
            break
        if t.track_id not in chosen_ids:
            selected.append(t)
            chosen_ids.add(t.track_id)

    key_objects = tuple(to_ego_frame_trajectory(t, ego_pose) for t in selected)
    mask = tuple(i < len(key_objects) for i in range(cfg.max_key_objects))
    return TrackContext(key_objects=key_objects, ego=to_ego_frame_ego(ego), object_mask=mask)
