"""K-means clusterization of unlabelled points and V_c-voxel densification."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cloud import ValidationError, VoxelGrid, voxel_keys


@dataclass(frozen=True)
class DensifyParams:
    voxel_size: float = 2.0
    num_clusters: int = 10

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValidationError("densification voxel size must be positive")
        if self.num_clusters < 1:
            raise ValidationError("num_clusters must be >= 1")


@dataclass(frozen=True, eq=False)
class Cluster:
    """Seeds index the current frame; support indexes the accumulated cloud."""

    seed_indices: np.ndarray
    support_indices: np.ndarray
    centroid: np.ndarray


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (points * points).sum(axis=1)[:, None] - 2.0 * points @ centers.T + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    closest = _sq_dists(points, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            break  # every point already sits on a center
        pick = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
        pick = min(pick, n - 1)
        centers.append(points[pick])
        closest = np.minimum(closest, _sq_dists(points, points[pick][None, :])[:, 0])
    return np.array(centers)


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 50,
           tol: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(assignment, centroids)`` with cluster ids dense in
    ``[0, len(centroids))``. Clusters that empty out are dropped, so fewer
    than ``k`` may come back.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if n == 0:
        raise ValidationError("k-means needs at least one point")
    if n <= k:
        return np.arange(n), points.copy()

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, k, rng)
    for _ in range(max_iter):
        assign = np.argmin(_sq_dists(points, centers), axis=1)
        counts = np.bincount(assign, minlength=len(centers))
        alive = counts > 0
        sums = np.stack([np.bincount(assign, weights=points[:, a], minlength=len(centers)) for a in range(3)], axis=1)
        new = sums[alive] / counts[alive, None]
        moved = np.inf if not alive.all() else np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if moved < tol:
            break
    assign = np.argmin(_sq_dists(points, centers), axis=1)
    used = np.unique(assign)
    remap = np.full(len(centers), -1)
    remap[used] = np.arange(len(used))
    return remap[assign], centers[used]


def _axis_contribution(frac: np.ndarray) -> np.ndarray:
    return np.where(frac < 1.0 / 3.0, -1, np.where(frac < 2.0 / 3.0, 0, 1))


def subvoxel_neighborhood(local_position) -> set[tuple[int, ...]]:
    """Extra neighbor-voxel offsets for a point at fractional position in its voxel.

    Each axis splits into thirds: the low third adds the -1 neighbor, the
    high third the +1 neighbor. Works for any dimension (2D example: the
    middle-left sub-pixel only reaches the left neighbor).
    """
    frac = np.asarray(local_position, dtype=np.float64).reshape(-1)
    contrib = _axis_contribution(frac)
    choices = [sorted({int(c), 0}) for c in contrib]
    zero = (0,) * len(contrib)
    return {off for off in itertools.product(*choices) if off != zero}


def candidate_cells(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Keys of each point's own voxel plus its sub-voxel neighbors (deduplicated)."""
    if len(points) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    keys = voxel_keys(points, voxel_size)
    contrib = _axis_contribution(points / voxel_size - keys)
    out = []
    for mask in itertools.product((0, 1), repeat=3):
        out.append(keys + contrib * np.array(mask))
    return np.unique(np.concatenate(out, axis=0), axis=0)


def densify(seed_points: np.ndarray, dense_grid: VoxelGrid) -> np.ndarray:
    """Accumulated-cloud indices gathered for a cluster's seed points (sorted, unique)."""
    seed_points = np.asarray(seed_points, dtype=np.float64).reshape(-1, 3)
    cells = candidate_cells(seed_points, dense_grid.voxel_size)
    return np.unique(dense_grid.points_in_cells(cells))


def clusterize(points: np.ndarray, seed_indices: np.ndarray, acc_points: np.ndarray,
               params: DensifyParams, seed: int = 0, dense_grid: VoxelGrid | None = None) -> list[Cluster]:
    """Split ``points[seed_indices]`` into k-means clusters and densify each one.

    ``dense_grid`` (a ``VoxelGrid`` over ``acc_points`` at ``params.voxel_size``)
    is built here unless supplied.
    """
    seed_indices = np.asarray(seed_indices, dtype=np.int64)
    if len(seed_indices) == 0:
        return []
    if dense_grid is None:
        dense_grid = VoxelGrid(acc_points, params.voxel_size)
    sel = points[seed_indices]
    assign, centroids = kmeans(sel, params.num_clusters, seed=seed)
    clusters = []
    for c in range(len(centroids)):
        members = seed_indices[assign == c]
        support = densify(points[members], dense_grid)
        clusters.append(Cluster(members, support, centroids[c]))
    return clusters
