import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from labelprop.cloud import ValidationError, VoxelGrid
from labelprop.clustering import DensifyParams, clusterize, densify, kmeans, subvoxel_neighborhood


def test_kmeans_single_cluster_is_barycenter():
    pts = np.random.default_rng(0).normal(size=(100, 3))
    assign, centers = kmeans(pts, 1)
    assert (assign == 0).all()
    np.testing.assert_allclose(centers[0], pts.mean(axis=0), atol=1e-12)


def test_kmeans_two_blobs_split_at_midplane():
    rng = np.random.default_rng(1)
    a = rng.normal(0, 0.3, (200, 3))
    b = rng.normal(0, 0.3, (200, 3)) + [10.0, 0, 0]
    assign, _ = kmeans(np.vstack([a, b]), 2, seed=4)
    left = np.vstack([a, b])[:, 0] < 5.0
    assert len(set(assign[left])) == 1 and len(set(assign[~left])) == 1
    assert assign[left][0] != assign[~left][0]


def test_kmeans_degenerate_counts():
    pts = np.random.default_rng(2).normal(size=(5, 3))
    assign, centers = kmeans(pts, 5)
    assert sorted(assign.tolist()) == [0, 1, 2, 3, 4]
    np.testing.assert_array_equal(centers[assign], pts)
    assign, centers = kmeans(pts, 9)
    assert len(centers) == 5
    with pytest.raises(ValidationError):
        kmeans(pts, 0)


def test_kmeans_deterministic_and_drops_empty():
    pts = np.random.default_rng(3).uniform(0, 10, (500, 3))
    a1, c1 = kmeans(pts, 10, seed=7)
    a2, c2 = kmeans(pts, 10, seed=7)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(c1, c2)
    dup = np.repeat(pts[:3], 20, axis=0)
    assign, centers = kmeans(dup, 10, seed=0)
    assert len(centers) == 3
    assert set(assign.tolist()) == {0, 1, 2}


def test_subvoxel_examples():
    assert subvoxel_neighborhood((0.5, 0.5, 0.5)) == set()
    assert subvoxel_neighborhood((0.1, 0.5)) == {(-1, 0)}
    assert subvoxel_neighborhood((0.1, 0.1, 0.1)) == set(itertools.product((-1, 0), repeat=3)) - {(0, 0, 0)}


@given(st.tuples(*[st.floats(0, 1, exclude_max=True)] * 3))
def test_subvoxel_counts_follow_extremal_axes(pos):
    extremal = sum(1 for f in pos if f < 1 / 3 or f >= 2 / 3)
    assert len(subvoxel_neighborhood(pos)) == 2 ** extremal - 1


def test_densify_center_seed_gets_own_voxel_only():
    rng = np.random.default_rng(0)
    acc = rng.uniform(-4, 6, (3000, 3))
    grid = VoxelGrid(acc, 2.0)
    support = densify(np.array([[1.0, 1.0, 1.0]]), grid)
    own = np.flatnonzero((np.floor(acc / 2.0) == 0).all(axis=1))
    np.testing.assert_array_equal(support, own)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_densify_linf_coverage(seed):
    rng = np.random.default_rng(seed)
    acc = rng.uniform(-5, 5, (2000, 3))
    seeds = rng.uniform(-5, 5, (10, 3))
    support = set(densify(seeds, VoxelGrid(acc, 2.0)).tolist())
    linf = np.abs(acc[:, None, :] - seeds[None]).max(axis=2).min(axis=1)
    assert set(np.flatnonzero(linf <= 2.0 / 3.0).tolist()) <= support


def test_clusterize_partitions_seeds():
    rng = np.random.default_rng(5)
    cur = rng.uniform(0, 30, (400, 3))
    acc = rng.uniform(0, 30, (4000, 3))
    pending = np.flatnonzero(rng.random(400) < 0.5)
    clusters = clusterize(cur, pending, acc, DensifyParams(2.0, 10), seed=3)
    seeds = np.concatenate([c.seed_indices for c in clusters])
    assert sorted(seeds.tolist()) == pending.tolist()
    assert len(clusters) <= 10
    for c in clusters:
        assert c.support_indices.min() >= 0 and c.support_indices.max() < len(acc)
        np.testing.assert_allclose(c.centroid, cur[c.seed_indices].mean(axis=0), atol=1e-9)
    again = clusterize(cur, pending, acc, DensifyParams(2.0, 10), seed=3)
    assert [c.seed_indices.tolist() for c in again] == [c.seed_indices.tolist() for c in clusters]
    assert clusterize(cur, np.array([], dtype=int), acc, DensifyParams()) == []
