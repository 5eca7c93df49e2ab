import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from labelprop.cloud import PointCloud, Pose, ValidationError
from labelprop.config import PipelineConfig
from labelprop.inference import (
    ConstantSegmenter, FileSegmenter, FusionWeights, OracleSegmenter, Pipeline, aggregate_overlaps,
    aggregate_scores, check_scores, fuse, scores_from_predictions, segment_oracle,
)
from labelprop.io import PredictionStore
from labelprop.propagation import LabelSchema
from labelprop.sequence import Frame, SemanticState

SCHEMA = LabelSchema(tuple("abcdef"), 2)


def test_oracle_noise_levels():
    truth = np.random.default_rng(0).integers(0, 6, 10_000)
    np.testing.assert_array_equal(segment_oracle(truth, 6, 0.0, 1).argmax(axis=1), truth)
    assert (segment_oracle(truth, 6, 1.0, 1).argmax(axis=1) != truth).all()
    flipped = (segment_oracle(truth, 6, 0.1, 1).argmax(axis=1) != truth).mean()
    assert abs(flipped - 0.1) <= 0.01


def test_oracle_unlabelled_points_get_uniform_scores():
    out = segment_oracle(np.array([-1, 2]), 4, 0.0, 0)
    np.testing.assert_allclose(out[0], 0.25)
    with pytest.raises(ValidationError):
        segment_oracle(np.array([4]), 4, 0.0, 0)


def test_file_segmenter_lookup_confidence_and_errors(tmp_path):
    store = PredictionStore(tmp_path, "03")
    store.write(5, np.array([1, 4, 2]), np.array([1.0, 0.5, 0.8]))
    seg = FileSegmenter(store, 6)
    scores = seg(np.zeros((2, 3)), np.array([5, 5]), np.array([2, 1]))
    np.testing.assert_allclose(scores[0], [0.04, 0.04, 0.8, 0.04, 0.04, 0.04], atol=1e-7)
    assert scores[1].argmax() == 4 and scores[1, 4] == pytest.approx(0.5)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0)
    with pytest.raises(KeyError, match="sequence 03 frame 6"):
        seg(np.zeros((1, 3)), np.array([6]), np.array([0]))
    with pytest.raises(KeyError, match="point 3"):
        seg(np.zeros((1, 3)), np.array([5]), np.array([3]))


def test_scores_from_predictions_one_hot_without_confidence():
    np.testing.assert_array_equal(scores_from_predictions(np.array([1]), None, 3), [[0, 1, 0]])
    with pytest.raises(ValidationError):
        scores_from_predictions(np.array([3]), None, 3)


def test_check_scores_contract():
    check_scores(np.array([[0.5, 0.5]]), 1, 2)
    for bad in ([[0.5, 0.6]], [[-0.1, 1.1]], [[np.nan, 1.0]]):
        with pytest.raises(ValidationError):
            check_scores(np.array(bad), 1, 2)
    with pytest.raises(ValidationError):
        check_scores(np.ones((2, 1)), 1, 1)


def test_aggregate_overlaps_examples():
    assert aggregate_overlaps([np.array([0.6, 0.4])]) == (0, 0.6)
    assert aggregate_overlaps([np.array([0.6, 0.4])] * 2) == (0, 0.6)
    label, conf = aggregate_overlaps([np.array([0.6, 0.4]), np.array([0.2, 0.8])])
    assert label == 1 and conf == pytest.approx(0.6)
    with pytest.raises(ValidationError):
        aggregate_overlaps([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_aggregate_scores_matches_per_point_mean_and_is_order_free(seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 10, 40)
    raw = rng.random((40, 4))
    scores = raw / raw.sum(axis=1, keepdims=True)
    state = aggregate_scores(ids, scores, 12)
    perm = rng.permutation(40)
    shuffled = aggregate_scores(ids[perm], scores[perm], 12)
    np.testing.assert_array_equal(state.labels, shuffled.labels)
    np.testing.assert_allclose(state.confidence, shuffled.confidence, atol=1e-12)
    for p in range(12):
        vecs = [scores[i] for i in np.flatnonzero(ids == p)]
        if not vecs:
            assert state.labels[p] == -1
            continue
        label, conf = aggregate_overlaps(vecs)
        assert state.labels[p] == label and state.confidence[p] == pytest.approx(conf)


def test_fuse_weight_cases():
    prop = SemanticState(np.array([5, 5, -1]), np.array([0.9, 0.9, 0.0]))
    deep = SemanticState(np.array([3, -1, 2]), np.array([0.8, 0.0, 0.7]))
    assert fuse(prop, deep, FusionWeights(0, 1)).labels.tolist() == [3, 5, 2]
    assert fuse(prop, deep, FusionWeights(1, 0)).labels.tolist() == [5, 5, 2]
    assert fuse(prop, deep, FusionWeights(0.5, 0.5)).labels.tolist() == [5, 5, 2]
    tie = fuse(SemanticState([4], [0.8]), SemanticState([3], [0.8]), FusionWeights(1, 1))
    assert tie.labels.tolist() == [3]
    agree = fuse(SemanticState([4], [0.6]), SemanticState([4], [1.0]), FusionWeights(1, 1))
    assert agree.confidence[0] == pytest.approx(0.8)
    with pytest.raises(ValidationError):
        fuse(SemanticState([-1], [0.0]), SemanticState([-1], [0.0]))
    with pytest.raises(ValidationError):
        FusionWeights(0, 0)


def scene_frames(n_frames=3):
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 10, (1500, 3))
    pts[:, 2] = 0.0
    pts = pts[np.abs(pts[:, 0] - 5.0) > 0.5]  # keep the two classes further apart than d_prop
    truth = np.where(pts[:, 0] < 5, 3, 4)
    return [(Frame(PointCloud(pts + rng.normal(0, 0.01, pts.shape)), Pose(np.eye(3), [0.0, 0.0, 0.0]), i), truth)
            for i in range(n_frames)]


def test_pipeline_cold_start_then_full_coverage():
    data = scene_frames()
    truth = {f.index: t for f, t in data}
    pipe = Pipeline(PipelineConfig(), SCHEMA, OracleSegmenter(truth, 6))
    first = pipe.process_frame(data[0][0])
    assert (first.propagated.labels == -1).all()
    np.testing.assert_array_equal(first.state.labels, data[0][1])
    later = pipe.process_frame(data[1][0])
    np.testing.assert_array_equal(later.state.labels, data[1][1])
    assert set(later.timings) == {"accumulate", "propagate", "cluster", "segment", "fuse"}
    assert pipe.frames_done == 2 and pipe.fps > 0
    assert "fps=" in pipe.timing_report()


def test_pipeline_no_clusters_when_everything_propagates():
    pts = np.random.default_rng(1).uniform(0, 3, (500, 3))
    f0 = Frame(PointCloud(pts), Pose.identity(), 0)
    f1 = Frame(PointCloud(pts), Pose.identity(), 1)
    pipe = Pipeline(PipelineConfig(), SCHEMA, ConstantSegmenter(4, 6))
    pipe.process_frame(f0)
    result = pipe.process_frame(f1)
    assert result.clusters == []
    assert (result.state.labels == 4).all()


def test_pipeline_deterministic_with_noise():
    data = scene_frames()
    truth = {f.index: t for f, t in data}
    runs = []
    for _ in range(2):
        pipe = Pipeline(PipelineConfig(noise=0.2, seed=3), SCHEMA, OracleSegmenter(truth, 6, 0.2, 3))
        runs.append([pipe.process_frame(f).state.labels.copy() for f, _ in data])
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


def test_pipeline_rejects_schema_mismatch():
    with pytest.raises(ValidationError):
        Pipeline(PipelineConfig(), SCHEMA, ConstantSegmenter(0, 5))


def test_window_horizon_trims_old_frames():
    data = scene_frames(6)
    pipe = Pipeline(PipelineConfig(num_frames=2), SCHEMA, ConstantSegmenter(4, 6))
    for f, _ in data:
        pipe.process_frame(f)
    assert [f.index for f, _ in pipe.window] == [3, 4, 5]
