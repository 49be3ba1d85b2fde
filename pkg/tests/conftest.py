import math

import numpy as np
import pytest

from trackfuse.core import (
    CameraName,
    EgoTrajectory,
    ObjectClass,
    Pose,
    Trajectory,
    TrajectorySample,
)
from trackfuse.geometry import default_camera_ring


def make_samples(points, t0=0.0, dt=0.5, velocities=None):
    """Trajectory samples from a list of (x, y) points."""
    out = []
    for i, (x, y) in enumerate(points):
        vel = None if velocities is None else velocities[i]
        out.append(TrajectorySample(timestamp=t0 + i * dt, position=(x, y, 0.0), velocity=vel))
    return tuple(out)


def make_track(track_id, points, confidence=1.0, cls=ObjectClass.CAR, velocities=None):
    return Trajectory(track_id, cls, make_samples(points, velocities=velocities), confidence)


def make_ego(points, heading=0.0):
    samples = make_samples(points)
    last = samples[-1]
    pose = Pose(position=last.position, heading=heading, timestamp=last.timestamp)
    return EgoTrajectory(samples=samples, current_pose=pose)


@pytest.fixture
def cameras():
    return default_camera_ring()


@pytest.fixture
def straight_ego():
    # ego driving +x at 4 m/s, ending at the origin
    return make_ego([(-8.0, 0.0), (-6.0, 0.0), (-4.0, 0.0), (-2.0, 0.0), (0.0, 0.0)])


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(0))
