import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from labelprop.cloud import (
    AugmentParams, PointCloud, Pose, ValidationError, VoxelGrid, augment, build_voxel_grid,
    grid_subsample, radius_neighbors, radius_search, transform, voxel_keys,
)
from oracles import brute_radius, nearest_to_barycenter


def random_pose(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Pose(q, rng.normal(size=3) * 10)


def test_cloud_rejects_non_finite_and_bad_channels():
    with pytest.raises(ValidationError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))
    with pytest.raises(ValidationError):
        PointCloud(np.zeros((3, 3)), beam=np.zeros(2, dtype=int))


def test_pose_rejects_non_rotation():
    with pytest.raises(ValidationError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValidationError):
        Pose(np.eye(3) * 1.01, np.zeros(3))


def test_transform_identity_and_translation():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]), beam=np.array([4, 5]))
    same = transform(cloud, Pose.identity())
    np.testing.assert_array_equal(same.points, cloud.points)
    moved = transform(cloud, Pose(np.eye(3), [1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(moved.points[0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(moved.beam, [4, 5])


def test_transform_preserves_distances_and_composes():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-20, 20, (50, 3))
    a, b = random_pose(rng), random_pose(rng)
    cloud = PointCloud(pts)
    out = transform(cloud, a).points
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(transform(transform(cloud, a), b).points, transform(cloud, b @ a).points, atol=1e-9)
    np.testing.assert_allclose((a.inverse() @ a).matrix, np.eye(4), atol=1e-12)


def test_voxel_key_floor_anchored_at_origin():
    grid = build_voxel_grid(PointCloud(np.array([[0.07, 0.0, 0.0], [-0.01, 0.05, 0.0]])), 0.05)
    assert grid.cells[(1, 0, 0)] == [0]
    assert grid.cells[(-1, 1, 0)] == [1]
    assert len(build_voxel_grid(PointCloud(np.zeros((0, 3))), 0.05).cells) == 0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)), elements=st.floats(-3, 3)),
       st.sampled_from([0.05, 0.3, 1.0]))
def test_voxel_grid_partitions_points(pts, vs):
    grid = VoxelGrid(pts, vs)
    flat = sorted(i for idx in grid.cells.values() for i in idx)
    assert flat == list(range(len(pts)))
    keys = voxel_keys(pts, vs)
    for key, idx in grid.cells.items():
        assert all(tuple(keys[i]) == key for i in idx)


def test_subsample_distinct_voxels_keeps_everything():
    pts = np.array([[0.01, 0.01, 0.01], [1.0, 1.0, 1.0], [2.0, 0.0, 0.0]])
    sub, idx = grid_subsample(PointCloud(pts), 0.05)
    np.testing.assert_array_equal(idx, [0, 1, 2])
    np.testing.assert_array_equal(sub.points, pts)


def test_subsample_single_voxel_picks_nearest_to_barycenter():
    rng = np.random.default_rng(3)
    for _ in range(20):
        pts = rng.uniform(0.0, 0.049, (10, 3))
        sub, idx = grid_subsample(PointCloud(pts, beam=np.arange(10)), 0.05)
        assert idx.tolist() == [nearest_to_barycenter(pts)]
        assert sub.beam.tolist() == idx.tolist()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 400))
def test_subsample_output_is_distinct_voxel_subset(seed, n):
    pts = np.random.default_rng(seed).uniform(-1, 1, (n, 3))
    sub, idx = grid_subsample(PointCloud(pts), 0.2)
    keys = voxel_keys(sub.points, 0.2)
    assert len({tuple(k) for k in keys}) == len(sub)
    assert len({tuple(k) for k in voxel_keys(pts, 0.2)}) == len(sub)
    np.testing.assert_array_equal(sub.points, pts[idx])


def test_radius_neighbors_trivial_cases():
    pts = np.array([[0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [5.0, 5.0, 5.0]])
    cloud = PointCloud(pts)
    grid = build_voxel_grid(cloud, 0.05)
    assert radius_neighbors(grid, cloud, [100.0, 100.0, 100.0], 0.3) == []
    hits = radius_neighbors(grid, cloud, [0.0, 0.0, 0.0], 0.3)
    assert hits[0] == (0, 0.0)
    assert [i for i, _ in hits] == [0, 1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.05, 0.1, 0.3, 1.0]), st.floats(0.01, 1.0))
def test_radius_search_matches_brute_force(seed, vs, frac):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 2, (300, 3))
    radius = min(frac * 10 * vs, 1.5)
    queries = np.vstack([rng.uniform(-0.5, 2.5, (20, 3)), pts[:5]])
    offsets, idx, d2 = radius_search(VoxelGrid(pts, vs), queries, radius)
    for q in range(len(queries)):
        got = idx[offsets[q]:offsets[q + 1]]
        assert set(got.tolist()) == brute_radius(pts, queries[q], radius)
        assert len(got) == len(set(got.tolist()))
        np.testing.assert_allclose(d2[offsets[q]:offsets[q + 1]], ((pts[got] - queries[q]) ** 2).sum(1))


def test_radius_search_on_voxel_boundaries():
    # Points sitting exactly on cell faces and at exactly the search radius.
    pts = np.array([[0.3, 0.0, 0.0], [0.0, 0.3, 0.0], [0.0, 0.0, -0.3], [0.15, 0.15, 0.0], [0.301, 0, 0]])
    offsets, idx, _ = radius_search(VoxelGrid(pts, 0.05), np.zeros((1, 3)), 0.3)
    assert set(idx.tolist()) == {0, 1, 2, 3}


def test_augment_centering_rotation_and_zero_noise():
    cloud = PointCloud(np.array([[1.0, 1.0, 1.0], [3.0, 3.0, 3.0]]))
    centered = augment(cloud, AugmentParams(rotate_z=False, scale=None), seed=0)
    np.testing.assert_allclose(centered.points.mean(axis=0), 0.0, atol=1e-15)

    one = PointCloud(np.array([[1.0, 0.0, 0.0]]))
    rot = augment(one, AugmentParams(center=False, angle=np.pi, scale=None), seed=0)
    np.testing.assert_allclose(rot.points, [[-1.0, 0.0, 0.0]], atol=1e-12)

    ident = augment(one, AugmentParams(center=False, rotate_z=False, scale=None, noise_sigma=0.0), seed=0)
    np.testing.assert_array_equal(ident.points, one.points)


def test_augment_flips_and_determinism():
    cloud = PointCloud(np.array([[1.0, 2.0, 3.0]]))
    fx = augment(cloud, AugmentParams(center=False, rotate_z=False, scale=None, flip_x=1.0), seed=1)
    np.testing.assert_array_equal(fx.points, [[1.0, -2.0, 3.0]])
    fy = augment(cloud, AugmentParams(center=False, rotate_z=False, scale=None, flip_y=1.0), seed=1)
    np.testing.assert_array_equal(fy.points, [[-1.0, 2.0, 3.0]])
    rng_pts = PointCloud(np.random.default_rng(0).normal(size=(100, 3)))
    full = AugmentParams(noise_sigma=0.01, flip_x=0.5, flip_y=0.5)
    np.testing.assert_array_equal(augment(rng_pts, full, 7).points, augment(rng_pts, full, 7).points)
    assert not np.array_equal(augment(rng_pts, full, 7).points, augment(rng_pts, full, 8).points)
