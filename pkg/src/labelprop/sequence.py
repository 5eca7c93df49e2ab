"""Sliding-window accumulation of registered frames and fiber decimation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cloud import PointCloud, Pose, ValidationError, VoxelGrid, grid_subsample, transform

UNKNOWN = -1


@dataclass(frozen=True, eq=False)
class SemanticState:
    """Per-point label (``-1`` = unknown) and confidence in [0, 1]."""

    labels: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int32).reshape(-1)
        conf = np.ascontiguousarray(self.confidence, dtype=np.float64).reshape(-1)
        if len(labels) != len(conf):
            raise ValidationError(f"{len(labels)} labels but {len(conf)} confidences")
        if labels.size and labels.min() < UNKNOWN:
            raise ValidationError("labels must be >= -1")
        if conf.size and (not np.isfinite(conf).all() or conf.min() < 0 or conf.max() > 1):
            raise ValidationError("confidence must lie in [0, 1]")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "confidence", conf)

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def unknown(cls, n: int) -> "SemanticState":
        return cls(np.full(n, UNKNOWN, dtype=np.int32), np.zeros(n))

    @classmethod
    def from_labels(cls, labels, confidence: float = 1.0) -> "SemanticState":
        """Full-confidence state from hard labels; ``-1`` entries get confidence 0."""
        labels = np.asarray(labels, dtype=np.int32)
        return cls(labels, np.where(labels >= 0, confidence, 0.0))

    def subset(self, idx) -> "SemanticState":
        return SemanticState(self.labels[idx], self.confidence[idx])

    @staticmethod
    def concatenate(states: Sequence["SemanticState"]) -> "SemanticState":
        if not states:
            return SemanticState.unknown(0)
        return SemanticState(np.concatenate([s.labels for s in states]),
                             np.concatenate([s.confidence for s in states]))


@dataclass(frozen=True, eq=False)
class Frame:
    """One sweep in sensor coordinates with its sensor-to-world pose."""

    cloud: PointCloud
    pose: Pose
    index: int
    timestamp: Optional[float] = None


@dataclass(frozen=True)
class AccumulateParams:
    n_frames: int = 20
    stride: int = 1
    voxel_size: float = 0.05
    crop_radius: float = 60.0

    def __post_init__(self):
        if self.n_frames < 0:
            raise ValidationError("n_frames must be >= 0")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")
        if not self.voxel_size > 0 or not self.crop_radius > 0:
            raise ValidationError("voxel_size and crop_radius must be positive")


@dataclass(frozen=True, eq=False)
class AccumulatedCloud:
    """World-frame union of the window plus the current sweep, grid-subsampled.

    ``cloud.frame`` / ``cloud.index`` identify the source point of every
    survivor. Points of the current sweep carry ``(-1, 0)`` semantics.
    """

    cloud: PointCloud
    semantics: SemanticState
    search_grid: VoxelGrid
    window: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.semantics) != len(self.cloud):
            raise ValidationError("semantics length differs from cloud length")
        if len(self.search_grid) != len(self.cloud):
            raise ValidationError("search grid does not index this cloud")

    def __len__(self) -> int:
        return len(self.cloud)


def select_window(indices: Sequence[int], current: int, n_frames: int, stride: int) -> list[int]:
    """Past frame indices in ``[current - n_frames, current)`` whose lag is a multiple of ``stride``.

    With ``n_frames=20, stride=5`` this is ``current-5, ..., current-20``.
    """
    return [i for i in indices if current - n_frames <= i < current and (current - i) % stride == 0]


def _world_cloud(frame: Frame) -> PointCloud:
    n = len(frame.cloud)
    tagged = frame.cloud.without_reflectivity().with_channels(
        frame=np.full(n, frame.index, dtype=np.int64),
        index=np.arange(n, dtype=np.int64),
    )
    return transform(tagged, frame.pose)


def accumulate(window: Sequence[tuple[Frame, SemanticState]], current: Frame,
               params: AccumulateParams = AccumulateParams()) -> AccumulatedCloud:
    """Build the accumulated cloud used to process ``current``.

    Past frames are selected by :func:`select_window`, moved to world
    coordinates, cropped to ``crop_radius`` around the current sensor origin,
    and subsampled together with the current sweep. Past points precede
    current ones so that exact duplicates resolve to the labelled copy.
    """
    by_index = {}
    for frame, state in window:
        if len(state) != len(frame.cloud):
            raise ValidationError(f"frame {frame.index}: {len(state)} labels for {len(frame.cloud)} points")
        by_index[frame.index] = (frame, state)
    chosen = sorted(select_window(list(by_index), current.index, params.n_frames, params.stride))

    clouds, states = [], []
    for i in chosen:
        frame, state = by_index[i]
        clouds.append(_world_cloud(frame))
        states.append(state)
    clouds.append(_world_cloud(current))
    states.append(SemanticState.unknown(len(current.cloud)))

    merged = PointCloud.concatenate(clouds)
    semantics = SemanticState.concatenate(states)
    origin = current.pose.translation
    d = merged.points - origin
    inside = np.flatnonzero((d * d).sum(axis=1) <= params.crop_radius ** 2)
    merged, semantics = merged.subset(inside), semantics.subset(inside)

    sub, keep = grid_subsample(merged, params.voxel_size)
    return AccumulatedCloud(sub, semantics.subset(keep), VoxelGrid(sub.points, params.voxel_size), chosen)


def elevation_angles(points: np.ndarray) -> np.ndarray:
    return np.arctan2(points[:, 2], np.hypot(points[:, 0], points[:, 1]))


def recover_beams(points: np.ndarray, num_beams: int, max_iter: int = 100) -> np.ndarray:
    """Assign each point a beam id by 1D k-means over elevation angle.

    Centers start at evenly spaced quantiles of the angle distribution, so
    the result is deterministic. Beam 0 is the highest elevation, matching
    the usual top-down ring numbering.
    """
    if num_beams < 1:
        raise ValidationError("num_beams must be >= 1")
    angles = elevation_angles(np.asarray(points, dtype=np.float64))
    if len(np.unique(angles)) < num_beams:
        raise ValidationError(
            f"cannot recover {num_beams} beams from {len(np.unique(angles))} distinct elevation angles"
        )
    sorted_angles = np.sort(angles)
    centers = np.quantile(sorted_angles, (np.arange(num_beams) + 0.5) / num_beams)
    for _ in range(max_iter):
        bounds = 0.5 * (centers[1:] + centers[:-1])
        assign = np.searchsorted(bounds, sorted_angles)
        counts = np.bincount(assign, minlength=num_beams)
        if (counts == 0).any():
            raise ValidationError("degenerate elevation histogram: an empty beam appeared")
        new = np.bincount(assign, weights=sorted_angles, minlength=num_beams) / counts
        if np.allclose(new, centers, rtol=0, atol=1e-12):
            centers = new
            break
        centers = new
    bounds = 0.5 * (centers[1:] + centers[:-1])
    ascending = np.searchsorted(bounds, angles)
    return (num_beams - 1 - ascending).astype(np.int64)


def decimate_fibers(frame: Frame, keep_modulus: int, num_beams: Optional[int] = None) -> Frame:
    """Keep beams ``b`` with ``b % keep_modulus == 0`` and renumber them ``b // keep_modulus``.

    Uses the cloud's beam channel when present, otherwise recovers beams
    from elevation angles with ``num_beams`` rings.
    """
    if keep_modulus < 1:
        raise ValidationError("keep_modulus must be >= 1")
    cloud = frame.cloud
    beam = cloud.beam
    if beam is None:
        if num_beams is None:
            raise ValidationError("cloud has no beam channel; pass num_beams to recover it")
        beam = recover_beams(cloud.points, num_beams)
    if keep_modulus == 1:
        return Frame(cloud.with_channels(beam=beam), frame.pose, frame.index, frame.timestamp)
    keep = np.flatnonzero(beam % keep_modulus == 0)
    out = cloud.with_channels(beam=beam).subset(keep)
    out = out.with_channels(beam=out.beam // keep_modulus)
    return Frame(out, frame.pose, frame.index, frame.timestamp)
