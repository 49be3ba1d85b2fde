"""Seeded synthetic driving scenes with analytic kinematic ground truth.

Objects and the ego vehicle follow closed-form motion models (constant
velocity, constant acceleration, constant turn rate), so every trajectory
attribute has an exact analytic value: the scene's attribute table is the
oracle the annotation pipeline and trainer are checked against.

Also provides the tracker-noise model used to emulate imperfect tracks.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import geometry
from .core import (
    Box2D,
    CameraModel,
    CameraName,
    EgoTrajectory,
    ObjectClass,
    Pose,
    Trajectory,
    TrajectorySample,
    dumps_record,
    from_record,
    loads_record,
    to_record,
)
from .track_context import BOX_EDGE_PX

DEFAULT_WINDOW_LEN = 5
PREDICT_DT = 0.5

ACCEL_EPS = 0.5  # m/s speed change separating accelerating/decelerating from steady
ANGLE_THRESH_DEG = 15.0
STILL_THRESH = 0.2  # m/s


class NotVisible(ValueError):
    pass


# ---------------------------------------------------------------------------
# Seed streams

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 output step; used to derive independent child seeds."""
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def child_seed(base_seed: int, index: int) -> int:
    """Order-independent per-scene seed stream."""
    return splitmix64((base_seed & _MASK64) ^ splitmix64(index & _MASK64))


def _tag_seed(base_seed: int, tag: str) -> int:
    return child_seed(base_seed, zlib.crc32(tag.encode("utf-8")))


# ---------------------------------------------------------------------------
# Motion models

CONSTANT_VELOCITY = "constant_velocity"
CONSTANT_ACCELERATION = "constant_acceleration"
CONSTANT_TURN_RATE = "constant_turn_rate"


@dataclass(frozen=True)
class MotionSpec:
    """Closed-form planar motion: start point, initial heading/speed, and
    either a tangential acceleration or a turn rate (never both)."""

    model: str
    p0: tuple[float, float]
    heading0: float
    speed0: float
    accel: float = 0.0
    turn_rate: float = 0.0

    def speed(self, t: float) -> float:
        if self.model == CONSTANT_ACCELERATION:
            return self.speed0 + self.accel * t
        return self.speed0

    def heading(self, t: float) -> float:
        if self.model == CONSTANT_TURN_RATE:
            return self.heading0 + self.turn_rate * t
        return self.heading0

    def position(self, t: float) -> tuple[float, float]:
        x0, y0 = self.p0
        h0 = self.heading0
        if self.model == CONSTANT_VELOCITY:
            d = self.speed0 * t
            return (x0 + d * math.cos(h0), y0 + d * math.sin(h0))
        if self.model == CONSTANT_ACCELERATION:
            d = self.speed0 * t + 0.5 * self.accel * t * t
            return (x0 + d * math.cos(h0), y0 + d * math.sin(h0))
        w = self.turn_rate
        r = self.speed0 / w
        h = h0 + w * t
        return (x0 + r * (math.sin(h) - math.sin(h0)), y0 - r * (math.cos(h) - math.cos(h0)))

    def velocity(self, t: float) -> tuple[float, float]:
        s = self.speed(t)
        h = self.heading(t)
        return (s * math.cos(h), s * math.sin(h))

    def arc_length(self, t1: float, t2: float) -> float:
        if self.model == CONSTANT_ACCELERATION:
            return self.speed0 * (t2 - t1) + 0.5 * self.accel * (t2 * t2 - t1 * t1)
        return self.speed0 * (t2 - t1)


def normalize_heading(h: float) -> float:
    h = math.fmod(h + math.pi, 2.0 * math.pi)
    if h <= 0.0:
        h += 2.0 * math.pi
    return h - math.pi


# ---------------------------------------------------------------------------
# Configuration and scene containers

DEFAULT_PALETTE: dict[str, tuple[int, int, int]] = {
    "black": (20, 20, 20),
    "white": (235, 235, 235),
    "red": (200, 30, 30),
    "blue": (30, 60, 200),
    "green": (30, 160, 60),
    "yellow": (230, 200, 40),
    "orange": (240, 130, 30),
    "gray": (128, 128, 128),
}

DEFAULT_SPEED_RANGES: dict[ObjectClass, tuple[float, float]] = {
    ObjectClass.CAR: (3.0, 15.0),
    ObjectClass.TRUCK: (3.0, 12.0),
    ObjectClass.BUS: (3.0, 12.0),
    ObjectClass.PEDESTRIAN: (0.6, 2.0),
    ObjectClass.BICYCLE: (1.5, 6.0),
    ObjectClass.MOTORCYCLE: (3.0, 15.0),
    ObjectClass.OTHER: (1.0, 8.0),
}

DEFAULT_CLASS_WEIGHTS: dict[ObjectClass, float] = {
    ObjectClass.CAR: 0.40,
    ObjectClass.TRUCK: 0.10,
    ObjectClass.BUS: 0.05,
    ObjectClass.PEDESTRIAN: 0.20,
    ObjectClass.BICYCLE: 0.10,
    ObjectClass.MOTORCYCLE: 0.10,
    ObjectClass.OTHER: 0.05,
}


@dataclass(frozen=True)
class SceneConfig:
    n_objects: tuple[int, int] = (4, 8)
    duration: float = 3.0
    frame_hz: float = 2.0  # keyframe cadence: 0.5 s between samples
    motion_model_weights: tuple[tuple[str, float], ...] = (
        (CONSTANT_VELOCITY, 0.4),
        (CONSTANT_ACCELERATION, 0.4),
        (CONSTANT_TURN_RATE, 0.2),
    )
    speed_ranges: tuple[tuple[str, tuple[float, float]], ...] = tuple(
        (cls.value, rng) for cls, rng in DEFAULT_SPEED_RANGES.items()
    )
    class_weights: tuple[tuple[str, float], ...] = tuple(
        (cls.value, w) for cls, w in DEFAULT_CLASS_WEIGHTS.items()
    )
    palette: tuple[tuple[str, tuple[int, int, int]], ...] = tuple(DEFAULT_PALETTE.items())
    image_size: tuple[int, int] = (1600, 900)
    seed: int = 0

    def __post_init__(self):
        if self.frame_hz <= 0:
            raise ValueError("frame_hz must be positive")
        if self.n_objects[0] > self.n_objects[1] or self.n_objects[0] < 0:
            raise ValueError("n_objects range is empty")

    def palette_dict(self) -> dict[str, tuple[int, int, int]]:
        return {name: tuple(rgb) for name, rgb in self.palette}

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        kwargs = dict(d)
        if "n_objects" in kwargs:
            kwargs["n_objects"] = tuple(kwargs["n_objects"])
        if "image_size" in kwargs:
            kwargs["image_size"] = tuple(kwargs["image_size"])
        if "motion_model_weights" in kwargs:
            kwargs["motion_model_weights"] = tuple(
                (str(m), float(w)) for m, w in kwargs["motion_model_weights"]
            )
        if "speed_ranges" in kwargs:
            kwargs["speed_ranges"] = tuple(
                (str(c), tuple(float(x) for x in r)) for c, r in kwargs["speed_ranges"]
            )
        if "class_weights" in kwargs:
            kwargs["class_weights"] = tuple((str(c), float(w)) for c, w in kwargs["class_weights"])
        if "palette" in kwargs:
            kwargs["palette"] = tuple(
                (str(n), tuple(int(x) for x in rgb)) for n, rgb in kwargs["palette"]
            )
        return cls(**kwargs)


@dataclass(frozen=True)
class NoiseConfig:
    position_sigma: float = 0.3  # meters
    velocity_sigma: float = 0.3  # m/s
    drop_prob: float = 0.1  # per history frame
    confidence_range: tuple[float, float] = (0.5, 1.0)
    mix_prob: float = 0.25  # probability a training context uses noisy tracks

    def __post_init__(self):
        if not (0.0 <= self.drop_prob <= 1.0 and 0.0 <= self.mix_prob <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class AttributeRow:
    """Analytic ground truth for one entity at one frame, over the standard
    5-frame window ending at that frame."""

    avg_speed: float
    accel_status: str
    direction: Optional[str]  # None for the ego vehicle
    next_position: tuple[float, float]  # world frame, PREDICT_DT ahead


@dataclass(frozen=True)
class SceneObject:
    trajectory: Trajectory  # full scene duration, world frame
    color: str
    motion: MotionSpec


@dataclass(frozen=True)
class Scene:
    scene_id: str
    seed: int
    frame_times: tuple[float, ...]
    ego: EgoTrajectory
    ego_motion: MotionSpec
    objects: tuple[SceneObject, ...]
    cameras: dict
    attributes: dict  # (entity_id, frame_index) -> AttributeRow; entity "ego" for ego
    config: SceneConfig

    def ego_pose(self, frame: int) -> Pose:
        t = self.frame_times[frame]
        x, y = self.ego_motion.position(t)
        return Pose(
            position=(x, y, 0.0),
            heading=normalize_heading(self.ego_motion.heading(t)),
            timestamp=t,
        )

    def object_by_id(self, track_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.trajectory.track_id == track_id:
                return obj
        raise KeyError(track_id)

    def tracks_up_to(self, frame: int) -> list[Trajectory]:
        out = []
        for obj in self.objects:
            t = obj.trajectory
            out.append(Trajectory(t.track_id, t.class_label, t.samples[: frame + 1], t.confidence))
        return out

    def ego_up_to(self, frame: int) -> EgoTrajectory:
        return EgoTrajectory(samples=self.ego.samples[: frame + 1], current_pose=self.ego_pose(frame))


# ---------------------------------------------------------------------------
# Generation


def _weighted_choice(rng: np.random.Generator, weighted: Sequence[tuple[str, float]]) -> str:
    names = [n for n, _ in weighted]
    w = np.array([x for _, x in weighted], dtype=float)
    return str(rng.choice(names, p=w / w.sum()))


def _samples_from_spec(spec: MotionSpec, frame_times: Sequence[float]) -> tuple[TrajectorySample, ...]:
    out = []
    for t in frame_times:
        x, y = spec.position(t)
        out.append(TrajectorySample(timestamp=t, position=(x, y, 0.0), velocity=spec.velocity(t)))
    return tuple(out)


def _draw_object_spec(
    rng: np.random.Generator, cfg: SceneConfig, spawn: tuple[float, float], t_spawn: float
) -> tuple[MotionSpec, ObjectClass]:
    cls = ObjectClass(_weighted_choice(rng, cfg.class_weights))
    lo, hi = dict(cfg.speed_ranges)[cls.value]
    speed0 = float(rng.uniform(lo, hi))
    heading0 = float(rng.uniform(-math.pi, math.pi))
    model = _weighted_choice(rng, cfg.motion_model_weights)
    accel = 0.0
    turn_rate = 0.0
    if model == CONSTANT_ACCELERATION:
        # keep speed comfortably positive so statuses stay separable
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if sign < 0:
            a_max = min(1.5, (speed0 - 0.5) / cfg.duration)
            if a_max < 0.35:
                sign = 1.0
        if sign > 0:
            accel = float(rng.uniform(0.35, 1.5))
        else:
            accel = -float(rng.uniform(0.35, a_max))
    elif model == CONSTANT_TURN_RATE:
        mag = float(rng.uniform(0.15, 0.6))
        turn_rate = mag if rng.random() < 0.5 else -mag
    # place the object so its position at t_spawn equals `spawn`
    probe = MotionSpec(model, (0.0, 0.0), heading0, speed0, accel, turn_rate)
    dx, dy = probe.position(t_spawn)
    spec = MotionSpec(model, (spawn[0] - dx, spawn[1] - dy), heading0, speed0, accel, turn_rate)
    return spec, cls


def _window_start(frame: int, window_len: int = DEFAULT_WINDOW_LEN) -> int:
    return max(0, frame - (window_len - 1))


def _attribute_row(
    spec: MotionSpec, frame: int, frame_times: Sequence[float], ego_heading: Optional[float]
) -> AttributeRow:
    t1 = frame_times[_window_start(frame)]
    t2 = frame_times[frame]
    avg_speed = spec.arc_length(t1, t2) / (t2 - t1)
    delta = spec.speed(t2) - spec.speed(t1)
    if delta > ACCEL_EPS:
        status = "accelerating"
    elif delta < -ACCEL_EPS:
        status = "decelerating"
    else:
        status = "steady"
    direction = None
    if ego_heading is not None:
        x1, y1 = spec.position(t1)
        x2, y2 = spec.position(t2)
        dx, dy = x2 - x1, y2 - y1
        if math.hypot(dx, dy) / (t2 - t1) < STILL_THRESH:
            direction = "straight"
        else:
            c, s = math.cos(-ego_heading), math.sin(-ego_heading)
            rel = (c * dx - s * dy, s * dx + c * dy)
            theta = math.degrees(math.atan2(rel[1], rel[0]))
            if theta > ANGLE_THRESH_DEG:
                direction = "left"
            elif theta < -ANGLE_THRESH_DEG:
                direction = "right"
            else:
                direction = "straight"
    px, py = spec.position(t2)
    vx, vy = spec.velocity(t2)
    return AttributeRow(
        avg_speed=avg_speed,
        accel_status=status,
        direction=direction,
        next_position=(px + vx * PREDICT_DT, py + vy * PREDICT_DT),
    )


def generate_scene(cfg: SceneConfig, seed: int, scene_id: Optional[str] = None) -> Scene:
    """Fully deterministic scene: (cfg, seed) decides every byte."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n_frames = int(round(cfg.duration * cfg.frame_hz)) + 1
    frame_times = tuple(i / cfg.frame_hz for i in range(n_frames))
    t_last = frame_times[-1]

    ego_p0 = (float(rng.uniform(-20, 20)), float(rng.uniform(-20, 20)))
    ego_heading = float(rng.uniform(-math.pi, math.pi))
    ego_speed = float(rng.uniform(3.0, 12.0))
    ego_turn = float(rng.uniform(0.02, 0.15)) * (1.0 if rng.random() < 0.5 else -1.0)
    ego_motion = MotionSpec(CONSTANT_TURN_RATE, ego_p0, ego_heading, ego_speed, turn_rate=ego_turn)
    ego_samples = _samples_from_spec(ego_motion, frame_times)
    ego = EgoTrajectory(
        samples=ego_samples,
        current_pose=Pose(
            position=ego_samples[-1].position,
            heading=normalize_heading(ego_motion.heading(t_last)),
            timestamp=t_last,
        ),
    )

    palette_names = [name for name, _ in cfg.palette]
    ego_end = ego_motion.position(t_last)
    n_objects = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    objects = []
    for i in range(n_objects):
        r = float(rng.uniform(4.0, 45.0))
        ang = float(rng.uniform(-math.pi, math.pi))
        spawn = (ego_end[0] + r * math.cos(ang), ego_end[1] + r * math.sin(ang))
        spec, cls = _draw_object_spec(rng, cfg, spawn, t_last)
        color = str(rng.choice(palette_names))
        traj = Trajectory(
            track_id=f"t{i:03d}",
            class_label=cls,
            samples=_samples_from_spec(spec, frame_times),
            confidence=1.0,
        )
        objects.append(SceneObject(trajectory=traj, color=color, motion=spec))

    attributes = {}
    for frame in range(1, n_frames):
        h = normalize_heading(ego_motion.heading(frame_times[frame]))
        attributes[("ego", frame)] = _attribute_row(ego_motion, frame, frame_times, None)
        for obj in objects:
            attributes[(obj.trajectory.track_id, frame)] = _attribute_row(
                obj.motion, frame, frame_times, h
            )

    return Scene(
        scene_id=scene_id or f"scene-{seed:016x}",
        seed=seed,
        frame_times=frame_times,
        ego=ego,
        ego_motion=ego_motion,
        objects=tuple(objects),
        cameras=geometry.default_camera_ring(cfg.image_size),
        attributes=attributes,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Tracker-noise model


def inject_tracker_noise(t: Trajectory, cfg: NoiseConfig, rng: np.random.Generator) -> Trajectory:
    """Gaussian position/velocity noise, independent history-frame drops
    (the current frame always survives), and a resampled confidence."""
    samples = []
    n = len(t.samples)
    for i, s in enumerate(t.samples):
        if i < n - 1 and rng.random() < cfg.drop_prob:
            continue
        pos = (
            s.position[0] + rng.normal(0.0, cfg.position_sigma) if cfg.position_sigma > 0 else s.position[0],
            s.position[1] + rng.normal(0.0, cfg.position_sigma) if cfg.position_sigma > 0 else s.position[1],
            s.position[2],
        )
        vel = s.velocity
        if vel is not None and cfg.velocity_sigma > 0:
            vel = (vel[0] + rng.normal(0.0, cfg.velocity_sigma), vel[1] + rng.normal(0.0, cfg.velocity_sigma))
        samples.append(TrajectorySample(s.timestamp, pos, vel))
    confidence = float(rng.uniform(*cfg.confidence_range))
    return Trajectory(t.track_id, t.class_label, tuple(samples), confidence)


# ---------------------------------------------------------------------------
# Rendering


def render_patch(
    scene: Scene, obj: SceneObject, frame: int, camera: CameraModel
) -> tuple[np.ndarray, Box2D]:
    """Flat-shaded object patch over a noisy background.

    Returns (pixels uint8 HxWx3, box in full-image coordinates). The patch is
    centered on the projected object position, clipped to the image.
    """
    ego_pose = scene.ego_pose(frame)
    pos = obj.trajectory.samples[frame].position
    res = geometry.project(pos, ego_pose, camera)
    if res.pixel is None:
        raise NotVisible(f"{obj.trajectory.track_id} not visible in {camera.name.value}")
    edge = BOX_EDGE_PX[obj.trajectory.class_label] * camera.image_size[0] / 1600.0
    half = edge / 2.0
    u, v = res.pixel
    w, h = camera.image_size
    u0, v0 = max(0, int(round(u - half))), max(0, int(round(v - half)))
    u1, v1 = min(w, int(round(u + half))), min(h, int(round(v + half)))
    if u1 <= u0 or v1 <= v0:
        raise NotVisible("projected box fully clipped")
    box = Box2D(min_corner=(float(u0), float(v0)), max_corner=(float(u1), float(v1)),
                score=obj.trajectory.confidence)

    tag = f"{obj.trajectory.track_id}/{frame}/{camera.name.value}"
    rng = np.random.Generator(np.random.PCG64(_tag_seed(scene.seed, tag)))
    ph, pw = v1 - v0, u1 - u0
    pixels = rng.integers(0, 256, size=(ph, pw, 3), dtype=np.int64)
    # object body covers the central ~70% of the patch in each axis
    my, mx = max(1, int(ph * 0.15)), max(1, int(pw * 0.15))
    rgb = np.array(scene.config.palette_dict()[obj.color], dtype=np.int64)
    body = rgb + rng.integers(-8, 9, size=(ph - 2 * my, pw - 2 * mx, 3))
    pixels[my : ph - my, mx : pw - mx, :] = body
    return np.clip(pixels, 0, 255).astype(np.uint8), box


def write_ppm(path, pixels: np.ndarray) -> None:
    """Binary PPM (P6) writer."""
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.astype(np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a P6 PPM")
    w, h = (int(x) for x in parts[1].split())
    data = parts[3]
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# Scene file format (core interchange records, one scene per file)


def _spec_record(entity: str, spec: MotionSpec, color: Optional[str] = None) -> dict:
    rec = {
        "kind": "motion_spec",
        "entity": entity,
        "model": spec.model,
        "p0": list(spec.p0),
        "heading0": spec.heading0,
        "speed0": spec.speed0,
        "accel": spec.accel,
        "turn_rate": spec.turn_rate,
    }
    if color is not None:
        rec["color"] = color
    return rec


def _spec_from_record(rec: dict) -> MotionSpec:
    return MotionSpec(
        model=str(rec["model"]),
        p0=tuple(float(x) for x in rec["p0"]),
        heading0=float(rec["heading0"]),
        speed0=float(rec["speed0"]),
        accel=float(rec["accel"]),
        turn_rate=float(rec["turn_rate"]),
    )


def save_scene(path, scene: Scene) -> None:
    lines = []
    lines.append(dumps_record({
        "kind": "scene_meta",
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "frame_times": list(scene.frame_times),
        "config": scene.config.to_dict(),
    }))
    lines.append(dumps_record(_spec_record("ego", scene.ego_motion)))
    lines.append(dumps_record(to_record(scene.ego)))
    for name in sorted(scene.cameras, key=lambda n: n.value):
        lines.append(dumps_record(to_record(scene.cameras[name])))
    for obj in scene.objects:
        lines.append(dumps_record(_spec_record(obj.trajectory.track_id, obj.motion, obj.color)))
        lines.append(dumps_record(to_record(obj.trajectory)))
    for (entity, frame), row in scene.attributes.items():
        lines.append(dumps_record({
            "kind": "attribute",
            "entity": entity,
            "frame": frame,
            "avg_speed": row.avg_speed,
            "accel_status": row.accel_status,
            "direction": row.direction,
            "next_position": list(row.next_position),
        }))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene(path) -> Scene:
    meta = None
    ego = None
    ego_motion = None
    cameras = {}
    specs: dict[str, tuple[MotionSpec, Optional[str]]] = {}
    trajectories: list[Trajectory] = []
    attributes = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = loads_record(line)
            kind = rec["kind"]
            if kind == "scene_meta":
                meta = rec
            elif kind == "motion_spec":
                specs[str(rec["entity"])] = (_spec_from_record(rec), rec.get("color"))
            elif kind == "ego_trajectory":
                ego = from_record(rec)
            elif kind == "camera":
                cam = from_record(rec)
                cameras[cam.name] = cam
            elif kind == "trajectory":
                trajectories.append(from_record(rec))
            elif kind == "attribute":
                attributes[(str(rec["entity"]), int(rec["frame"]))] = AttributeRow(
                    avg_speed=float(rec["avg_speed"]),
                    accel_status=str(rec["accel_status"]),
                    direction=None if rec["direction"] is None else str(rec["direction"]),
                    next_position=tuple(float(x) for x in rec["next_position"]),
                )
            else:
                raise ValueError(f"{path}: unexpected record kind {kind!r}")
    if meta is None or ego is None or "ego" not in specs:
        raise ValueError(f"{path}: incomplete scene file")
    ego_motion = specs["ego"][0]
    objects = tuple(
        SceneObject(trajectory=t, color=specs[t.track_id][1], motion=specs[t.track_id][0])
        for t in trajectories
    )
    return Scene(
        scene_id=str(meta["scene_id"]),
        seed=int(meta["seed"]),
        frame_times=tuple(float(t) for t in meta["frame_times"]),
        ego=ego,
        ego_motion=ego_motion,
        objects=objects,
        cameras=cameras,
        attributes=attributes,
        config=SceneConfig.from_dict(meta["config"]),
    )
