"""Point-cloud containers, rigid transforms, voxel hashing and radius search.

All coordinates are held as float64. Voxel keys use floor division anchored
at the world origin, so a point lying exactly on a boundary belongs to the
upper cell's lower face, i.e. ``floor(x / voxel_size)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels


class ValidationError(ValueError):
    """Raised when input data violates a structural invariant."""


_CHANNELS = ("reflectivity", "beam", "frame", "index")


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 3), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"points must have shape (N, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
        raise ValidationError(f"non-finite coordinate at point {bad}")
    return np.ascontiguousarray(pts)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Flat collection of 3D points with optional per-point channels.

    ``frame`` records the sequence index a point was acquired in and
    ``index`` its position inside that frame; both survive subsampling and
    accumulation so that external predictions can be looked up later.
    """

    points: np.ndarray
    reflectivity: Optional[np.ndarray] = None
    beam: Optional[np.ndarray] = None
    frame: Optional[np.ndarray] = None
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        n = len(self.points)
        dtypes = {"reflectivity": np.float64, "beam": np.int64, "frame": np.int64, "index": np.int64}
        for name in _CHANNELS:
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.ascontiguousarray(value, dtype=dtypes[name]).reshape(-1)
            if len(arr) != n:
                raise ValidationError(f"channel {name!r} has {len(arr)} entries for {n} points")
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        kwargs = {name: getattr(self, name)[idx] for name in _CHANNELS if getattr(self, name) is not None}
        return PointCloud(self.points[idx], **kwargs)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return replace(self, points=points)

    def with_channels(self, **channels) -> "PointCloud":
        return replace(self, **channels)

    def without_reflectivity(self) -> "PointCloud":
        return replace(self, reflectivity=None)

    @staticmethod
    def concatenate(clouds: list["PointCloud"]) -> "PointCloud":
        """Stack clouds; a channel is kept only when every input carries it."""
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        pts = np.concatenate([c.points for c in clouds], axis=0)
        kwargs = {}
        for name in _CHANNELS:
            values = [getattr(c, name) for c in clouds]
            if all(v is not None for v in values):
                kwargs[name] = np.concatenate(values)
        return PointCloud(pts, **kwargs)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping frame coordinates to world coordinates."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(R).all() and np.isfinite(t).all()):
            raise ValidationError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValidationError("rotation is not orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((4, 4), (3, 4)):
            raise ValidationError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        """``(self @ other)(p) == self(other(p))``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


def transform(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Apply ``p' = R p + t`` to every point; channels are untouched."""
    return cloud.with_points(pose.apply(cloud.points))


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    if not voxel_size > 0:
        raise ValidationError(f"voxel_size must be positive, got {voxel_size}")
    return np.floor(points / voxel_size).astype(np.int64)


def _linearize(keys: np.ndarray, kmin: np.ndarray, dims: np.ndarray) -> np.ndarray:
    k = keys - kmin
    return (k[:, 0] * dims[1] + k[:, 1]) * dims[2] + k[:, 2]


class VoxelGrid:
    """Spatial hash from integer voxel keys to point indices.

    Internally points are sorted by a linearized key so that any run of
    consecutive z-cells within one (x, y) column is a contiguous slice; the
    search kernels rely on this layout. ``cells`` gives the plain mapping
    view.
    """

    __slots__ = ("voxel_size", "keys", "order", "sorted_lin", "kmin", "dims", "sorted_points", "_cells")

    def __init__(self, points: np.ndarray, voxel_size: float):
        points = _as_points(points)
        self.voxel_size = float(voxel_size)
        self.keys = voxel_keys(points, self.voxel_size)
        if len(points):
            self.kmin = self.keys.min(axis=0)
            self.dims = self.keys.max(axis=0) - self.kmin + 1
        else:
            self.kmin = np.zeros(3, dtype=np.int64)
            self.dims = np.ones(3, dtype=np.int64)
        lin = _linearize(self.keys, self.kmin, self.dims)
        self.order = np.argsort(lin, kind="stable")
        self.sorted_lin = np.ascontiguousarray(lin[self.order])
        self.sorted_points = np.ascontiguousarray(points[self.order])
        self._cells = None

    def __len__(self) -> int:
        return len(self.order)

    @property
    def cells(self) -> dict[tuple[int, int, int], list[int]]:
        if self._cells is None:
            cells: dict[tuple[int, int, int], list[int]] = {}
            for i in self.order:
                cells.setdefault(tuple(int(v) for v in self.keys[i]), []).append(int(i))
            self._cells = cells
        return self._cells

    def linear(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linear ids for ``keys`` plus a mask of keys inside the grid bounds."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        inside = ((keys >= self.kmin) & (keys < self.kmin + self.dims)).all(axis=1)
        return _linearize(keys, self.kmin, self.dims), inside

    def points_in_cells(self, keys: np.ndarray) -> np.ndarray:
        """Original indices of all points stored in the given cells (keys deduplicated)."""
        lin, inside = self.linear(keys)
        lin = np.unique(lin[inside])
        lo = np.searchsorted(self.sorted_lin, lin, side="left")
        hi = np.searchsorted(self.sorted_lin, lin, side="right")
        return self.order[expand_ranges(lo, hi)]


def expand_ranges(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Concatenate ``arange(lo[i], hi[i])`` for all i without a Python loop."""
    lengths = hi - lo
    keep = lengths > 0
    lo, lengths = lo[keep], lengths[keep]
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.cumsum(lengths) - lengths
    out = np.arange(total, dtype=np.int64) - np.repeat(starts - lo, lengths)
    return out


def build_voxel_grid(cloud: PointCloud, voxel_size: float) -> VoxelGrid:
    return VoxelGrid(cloud.points, voxel_size)


def grid_subsample(cloud: PointCloud, voxel_size: float) -> tuple[PointCloud, np.ndarray]:
    """Keep, per occupied voxel, the input point nearest the voxel barycenter.

    Ties resolve to the lowest input index. Returned indices are ascending,
    so the output preserves input order.
    """
    n = len(cloud)
    if n == 0:
        return cloud, np.zeros(0, dtype=np.int64)
    keys = voxel_keys(cloud.points, voxel_size)
    kmin = keys.min(axis=0)
    dims = keys.max(axis=0) - kmin + 1
    _, inverse, counts = np.unique(_linearize(keys, kmin, dims), return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    bary = np.stack([np.bincount(inverse, weights=cloud.points[:, a]) for a in range(3)], axis=1)
    bary /= counts[:, None]
    d = cloud.points - bary[inverse]
    dist2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    order = np.lexsort((np.arange(n), dist2, inverse))
    first = np.ones(n, dtype=bool)
    first[1:] = inverse[order[1:]] != inverse[order[:-1]]
    selected = np.sort(order[first])
    return cloud.subset(selected), selected


def radius_search(grid: VoxelGrid, queries: np.ndarray, radius: float):
    """Batched exact radius search.

    Returns CSR arrays ``(offsets, indices, dist2)``: the neighbors of query
    ``q`` are ``indices[offsets[q]:offsets[q+1]]`` (original point indices),
    in no particular order.
    """
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    queries = _as_points(queries)
    offsets, idx, dist2 = kernels.radius_query(
        grid.sorted_points, grid.sorted_lin, grid.kmin, grid.dims, grid.voxel_size, queries, float(radius)
    )
    return offsets, grid.order[idx], dist2


def radius_neighbors(grid: VoxelGrid, cloud: PointCloud, query, radius: float) -> list[tuple[int, float]]:
    """All points of ``cloud`` within ``radius`` (inclusive) of ``query``.

    ``grid`` must have been built over ``cloud``. Results are sorted by
    distance, then index.
    """
    if len(grid) != len(cloud):
        raise ValidationError("grid was not built over this cloud")
    offsets, idx, dist2 = radius_search(grid, np.asarray(query, dtype=np.float64).reshape(1, 3), radius)
    order = np.lexsort((idx, dist2))
    return [(int(idx[i]), float(np.sqrt(dist2[i]))) for i in order]


@dataclass(frozen=True)
class AugmentParams:
    """Geometric augmentations applied in a fixed order.

    Order: centering, z-rotation, scaling, flips, Gaussian noise. ``angle``
    fixes the z-rotation instead of drawing it uniformly in [0, 2*pi).
    ``flip_x`` flips around the x axis (y -> -y) with the given probability,
    ``flip_y`` around the y axis (x -> -x).
    """

    center: bool = True
    rotate_z: bool = True
    angle: Optional[float] = None
    scale: Optional[tuple[float, float]] = (0.95, 1.05)
    noise_sigma: float = 0.0
    flip_x: float = 0.0
    flip_y: float = 0.0


def augment(cloud: PointCloud, params: AugmentParams, seed: int) -> PointCloud:
    rng = np.random.default_rng(seed)
    pts = cloud.points.copy()
    if params.center and len(pts):
        pts -= pts.mean(axis=0)
    if params.rotate_z:
        theta = params.angle if params.angle is not None else rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = pts @ rot.T
    if params.scale is not None:
        lo, hi = params.scale
        pts *= rng.uniform(lo, hi)
    if params.flip_x > 0 and rng.random() < params.flip_x:
        pts[:, 1] = -pts[:, 1]
    if params.flip_y > 0 and rng.random() < params.flip_y:
        pts[:, 0] = -pts[:, 0]
    if params.noise_sigma > 0:
        pts += rng.normal(0.0, params.noise_sigma, size=pts.shape)
    return cloud.with_points(pts)
