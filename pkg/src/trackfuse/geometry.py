"""Camera projection, box overlap, and non-maximum suppression.

Pure functions over the core types; used by key-object selection and the
annotation pipeline. Pixel convention is half-open: a point projecting to
u == width (or v == height) is out of bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Box2D, CameraModel, Pose


@dataclass(frozen=True)
class ProjectionResult:
    """Pixel location of a projected world point, when visible.

    ``pixel`` is present iff the point lies in front of the camera
    (depth > 0) and inside the image bounds; ``depth`` is always the
    camera-frame z of the point.
    """

    pixel: Optional[tuple[float, float]]
    depth: float


def yaw_matrix(heading: float) -> np.ndarray:
    """3x3 rotation about +z by ``heading`` radians."""
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def world_to_ego(point: np.ndarray, ego_pose: Pose) -> np.ndarray:
    """Re-express a world point in the ego frame (x forward, y left, z up)."""
    return yaw_matrix(-ego_pose.heading) @ (np.asarray(point, float) - np.asarray(ego_pose.position))


def project(point, ego_pose: Pose, cam: CameraModel) -> ProjectionResult:
    """World point -> pixel via the world->ego->camera chain and pinhole division."""
    p_ego = world_to_ego(np.asarray(point, dtype=float), ego_pose)
    r = np.asarray(cam.rotation, dtype=float)
    t = np.asarray(cam.translation, dtype=float)
    p_cam = r @ (p_ego - t)
    depth = float(p_cam[2])
    if depth <= 0.0:
        return ProjectionResult(pixel=None, depth=depth)
    u = cam.fx * p_cam[0] / depth + cam.cx
    v = cam.fy * p_cam[1] / depth + cam.cy
    w, h = cam.image_size
    if 0.0 <= u < w and 0.0 <= v < h:
        return ProjectionResult(pixel=(float(u), float(v)), depth=depth)
    return ProjectionResult(pixel=None, depth=depth)


def back_project(pixel: tuple[float, float], depth: float, ego_pose: Pose, cam: CameraModel) -> np.ndarray:
    """Inverse of :func:`project`: pixel plus camera depth -> world point."""
    x = (pixel[0] - cam.cx) / cam.fx * depth
    y = (pixel[1] - cam.cy) / cam.fy * depth
    p_cam = np.array([x, y, depth])
    r = np.asarray(cam.rotation, dtype=float)
    t = np.asarray(cam.translation, dtype=float)
    p_ego = r.T @ p_cam + t
    return yaw_matrix(ego_pose.heading) @ p_ego + np.asarray(ego_pose.position)


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection-over-union of two axis-aligned boxes; 0 when disjoint."""
    ix = min(a.max_corner[0], b.max_corner[0]) - max(a.min_corner[0], b.min_corner[0])
    iy = min(a.max_corner[1], b.max_corner[1]) - max(a.min_corner[1], b.min_corner[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def nms(boxes: Sequence[Box2D], iou_threshold: float = 0.1) -> list[int]:
    """Greedy class-agnostic NMS; returns kept indices in score order.

    A box is kept iff its IoU with every previously kept box is at or below
    the threshold. Ties on score break toward the lower original index.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside [0, 1]")
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) <= iou_threshold for j in kept):
            kept.append(i)
    return kept


def default_camera_ring(
    image_size: tuple[int, int] = (1600, 900),
    focal: float = 1200.0,
    mount_radius: float = 1.5,
) -> dict:
    """Six pinhole cameras covering the full ring around the ego vehicle.

    Each camera looks outward at a fixed yaw in the ego frame; the optical
    axis is horizontal at z = 1.5 m.
    """
    from .core import CameraName

    yaws = {
        CameraName.FRONT: 0.0,
        CameraName.FRONT_LEFT: math.radians(60.0),
        CameraName.FRONT_RIGHT: math.radians(-60.0),
        CameraName.BACK: math.radians(180.0),
        CameraName.BACK_LEFT: math.radians(120.0),
        CameraName.BACK_RIGHT: math.radians(-120.0),
    }
    w, h = image_size
    intr = ((focal, 0.0, w / 2.0), (0.0, focal, h / 2.0), (0.0, 0.0, 1.0))
    ring = {}
    for name, yaw in yaws.items():
        c, s = math.cos(yaw), math.sin(yaw)
        fwd = np.array([c, s, 0.0])  # camera z in ego frame
        right = np.array([s, -c, 0.0])  # camera x in ego frame
        down = np.array([0.0, 0.0, -1.0])  # camera y in ego frame
        rotation = tuple(tuple(float(x) for x in row) for row in (right, down, fwd))
        translation = tuple(float(x) for x in (mount_radius * c, mount_radius * s, 1.5))
        ring[name] = CameraModel(
            name=name,
            intrinsics=intr,
            rotation=rotation,
            translation=translation,
            image_size=image_size,
        )
    return ring
