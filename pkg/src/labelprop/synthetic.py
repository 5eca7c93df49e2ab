"""Synthetic driving sequences and beam-structured scans with exact ground truth.

The street scene keeps every pair of differently-labelled surfaces more
than 0.4 m apart, so geometric propagation at the default radius can never
mix classes. One box drives along the road, floating 0.5 m above it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, Pose
from .evaluation import load_dataset
from .sequence import Frame

_SK = load_dataset("semantickitti")
ROAD = _SK.class_id("road")
SIDEWALK = _SK.class_id("sidewalk")
BUILDING = _SK.class_id("building")
POLE = _SK.class_id("pole")
CAR = _SK.class_id("car")


def _box_faces(lo, hi):
    """Six axis-aligned rectangles ``(fixed_axis, value, lo3, hi3)`` of a box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    faces = []
    for axis in range(3):
        for v in (lo[axis], hi[axis]):
            flo, fhi = lo.copy(), hi.copy()
            flo[axis] = fhi[axis] = v
            faces.append((flo, fhi))
    return faces


@dataclass(frozen=True)
class StreetScene:
    num_frames: int = 25
    points_per_frame: int = 8000
    sensor_speed: float = 0.8      # m per frame along +x
    car_speed: float = 1.5         # m per frame along +x
    view_range: float = 40.0
    street_length: float = 200.0
    seed: int = 0

    def static_surfaces(self):
        L = self.street_length
        rects = [
            (ROAD, np.array([-50.0, -5.0, 0.0]), np.array([L, 5.0, 0.0])),
            (SIDEWALK, np.array([-50.0, 6.0, 0.6]), np.array([L, 9.0, 0.6])),
            (SIDEWALK, np.array([-50.0, -9.0, 0.6]), np.array([L, -6.0, 0.6])),
            (BUILDING, np.array([-50.0, 12.0, 1.0]), np.array([L, 12.0, 8.0])),
            (BUILDING, np.array([-50.0, -12.0, 1.0]), np.array([L, -12.0, 8.0])),
        ]
        for x in np.arange(-40.0, L, 15.0):
            for lo, hi in _box_faces([x, 10.0, 1.0], [x + 0.3, 10.3, 5.0]):
                rects.append((POLE, lo, hi))
        return rects

    def car_surfaces(self, i: int):
        x = 5.0 + self.car_speed * i
        return [(CAR, lo, hi) for lo, hi in _box_faces([x, -3.0, 0.5], [x + 4.0, -1.2, 2.0])]

    def pose(self, i: int) -> Pose:
        yaw = 0.02 * np.sin(0.3 * i)
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose(rot, [self.sensor_speed * i, 1.5 + 0.05 * np.cos(0.2 * i), 1.7])

    def frame(self, i: int) -> tuple[Frame, np.ndarray]:
        """Sweep ``i`` in sensor coordinates plus its per-point SemanticKITTI class ids."""
        rng = np.random.default_rng([self.seed, i])
        pose = self.pose(i)
        cx = pose.translation[0]
        rects = []
        for label, lo, hi in self.static_surfaces() + self.car_surfaces(i):
            lo, hi = lo.copy(), hi.copy()
            lo[0], hi[0] = max(lo[0], cx - self.view_range), min(hi[0], cx + self.view_range)
            if lo[0] > hi[0]:
                continue
            ext = hi - lo
            area = ext[0] * ext[1] + ext[0] * ext[2] + ext[1] * ext[2]  # one extent is zero
            rects.append((label, lo, hi, area))
        areas = np.array([r[3] for r in rects])
        counts = rng.multinomial(self.points_per_frame, areas / areas.sum())
        pts, labels = [], []
        for (label, lo, hi, _), n in zip(rects, counts):
            pts.append(lo + rng.random((n, 3)) * (hi - lo))
            labels.append(np.full(n, label))
        world = np.concatenate(pts)
        labels = np.concatenate(labels).astype(np.int64)
        order = rng.permutation(len(world))
        world, labels = world[order], labels[order]
        local = (world - pose.translation) @ pose.rotation
        return Frame(PointCloud(local, reflectivity=rng.random(len(local))), pose, i), labels

    def frames(self):
        for i in range(self.num_frames):
            yield self.frame(i)


HDL64_ELEVATION = np.linspace(np.deg2rad(2.0), np.deg2rad(-24.8), 64)


def beam_scan(num_beams: int = 64, points_per_beam: int = 500, seed: int = 0,
              elevations: np.ndarray | None = None, jitter: float = np.deg2rad(0.01)) -> PointCloud:
    """A rotating-LiDAR sweep with known beam ids (0 = highest elevation)."""
    rng = np.random.default_rng(seed)
    if elevations is None:
        elevations = np.linspace(np.deg2rad(2.0), np.deg2rad(-24.8), num_beams)
    elev = np.repeat(elevations, points_per_beam) + rng.normal(0.0, jitter, num_beams * points_per_beam)
    azim = rng.uniform(-np.pi, np.pi, len(elev))
    rng_m = rng.uniform(5.0, 60.0, len(elev))
    pts = np.stack([rng_m * np.cos(elev) * np.cos(azim), rng_m * np.cos(elev) * np.sin(azim), rng_m * np.sin(elev)], 1)
    beam = np.repeat(np.arange(num_beams), points_per_beam)
    return PointCloud(pts, beam=beam)
