"""Segmenter back-ends, overlap averaging, fusion and the per-frame pipeline."""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .cloud import ValidationError, VoxelGrid, transform
from .clustering import Cluster, DensifyParams, clusterize
from .config import PipelineConfig
from .io import PredictionStore
from .propagation import LabelSchema, PropagationParams, propagate
from .sequence import UNKNOWN, AccumulateParams, AccumulatedCloud, Frame, SemanticState, accumulate


class Segmenter(Protocol):
    """Scores ``(n, num_classes)`` for points given in world coordinates.

    ``frames``/``indices`` identify each point's source sweep and position in
    it. Rows must be finite, non-negative and sum to 1.
    """

    num_classes: int

    def __call__(self, points: np.ndarray, frames: np.ndarray, indices: np.ndarray) -> np.ndarray: ...


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def segment_oracle(truth: np.ndarray, num_classes: int, noise: float,
                   rng: np.random.Generator | int) -> np.ndarray:
    """One-hot truth with a ``noise`` fraction flipped to a uniformly drawn other class.

    Points without a truth class (``-1``) get uniform scores.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    truth = np.asarray(truth, dtype=np.int64)
    if truth.size and (truth.min() < UNKNOWN or truth.max() >= num_classes):
        raise ValidationError(f"oracle truth outside [-1, {num_classes})")
    labels = truth.copy()
    if noise > 0 and num_classes > 1:
        flip = rng.random(len(truth)) < noise
        labels[flip] = (truth[flip] + rng.integers(1, num_classes, size=int(flip.sum()))) % num_classes
    unlabeled = truth == UNKNOWN
    labels[unlabeled] = 0
    out = one_hot(labels, num_classes)
    out[unlabeled] = 1.0 / num_classes
    return out


def scores_from_predictions(labels: np.ndarray, confidence: Optional[np.ndarray], num_classes: int) -> np.ndarray:
    """One-hot scores, or ``c`` on the label and ``(1 - c) / (K - 1)`` elsewhere."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = int(labels[(labels < 0) | (labels >= num_classes)][0])
        raise ValidationError(f"predicted class {bad} outside [0, {num_classes})")
    if confidence is None:
        return one_hot(labels, num_classes)
    conf = np.asarray(confidence, dtype=np.float64)
    if num_classes == 1:
        return np.ones((len(labels), 1))
    out = np.repeat(((1.0 - conf) / (num_classes - 1))[:, None], num_classes, axis=1)
    out[np.arange(len(labels)), labels] = conf
    return out


class OracleSegmenter:
    """Test double returning (optionally corrupted) ground truth.

    ``truth`` maps a frame index to that frame's schema labels.
    """

    def __init__(self, truth: Mapping[int, np.ndarray] | Callable[[int], np.ndarray],
                 num_classes: int, noise: float = 0.0, seed: int = 0):
        self._truth = truth
        self.num_classes = num_classes
        self.noise = noise
        self.rng = np.random.default_rng(seed)

    def _labels(self, frame: int) -> np.ndarray:
        return self._truth(frame) if callable(self._truth) else self._truth[frame]

    def __call__(self, points, frames, indices):
        truth = np.empty(len(frames), dtype=np.int64)
        for f in np.unique(frames):
            sel = frames == f
            truth[sel] = np.asarray(self._labels(int(f)))[indices[sel]]
        return segment_oracle(truth, self.num_classes, self.noise, self.rng)


class FileSegmenter:
    """Looks predictions up in a :class:`PredictionStore`."""

    def __init__(self, store: PredictionStore, num_classes: int):
        self.store = store
        self.num_classes = num_classes

    def __call__(self, points, frames, indices):
        labels, conf = self.store.lookup(frames, indices)
        return scores_from_predictions(labels, conf, self.num_classes)


class ConstantSegmenter:
    """Predicts one class everywhere; used for throughput measurements."""

    def __init__(self, label: int, num_classes: int):
        if not 0 <= label < num_classes:
            raise ValidationError(f"constant label {label} outside [0, {num_classes})")
        self.label = label
        self.num_classes = num_classes

    def __call__(self, points, frames, indices):
        return one_hot(np.full(len(points), self.label), self.num_classes)


def check_scores(scores: np.ndarray, n: int, num_classes: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (n, num_classes):
        raise ValidationError(f"segmenter returned shape {scores.shape}, expected {(n, num_classes)}")
    if not np.isfinite(scores).all() or (scores.size and scores.min() < 0):
        raise ValidationError("segmenter scores must be finite and non-negative")
    if n and np.abs(scores.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValidationError("segmenter scores must sum to 1 per point")
    return scores


def aggregate_overlaps(score_vectors: Sequence[np.ndarray]) -> tuple[int, float]:
    """Mean of all score vectors for one point; returns ``(argmax, mean score at argmax)``."""
    if len(score_vectors) == 0:
        raise ValidationError("need at least one score vector")
    mean = np.mean(np.asarray(score_vectors, dtype=np.float64), axis=0)
    best = int(np.argmax(mean))
    return best, float(mean[best])


def aggregate_scores(point_ids: np.ndarray, scores: np.ndarray, num_points: int) -> SemanticState:
    """Vectorized :func:`aggregate_overlaps` over many points; unseen points stay unknown."""
    k = scores.shape[1]
    counts = np.bincount(point_ids, minlength=num_points)
    sums = np.zeros((num_points, k))
    np.add.at(sums, point_ids, scores)
    seen = counts > 0
    mean = sums[seen] / counts[seen, None]
    labels = np.full(num_points, UNKNOWN, dtype=np.int32)
    conf = np.zeros(num_points)
    best = np.argmax(mean, axis=1)
    labels[seen] = best
    conf[seen] = np.clip(mean[np.arange(len(best)), best], 0.0, 1.0)
    return SemanticState(labels, conf)


@dataclass(frozen=True)
class FusionWeights:
    w1: float = 0.0  # propagation
    w2: float = 1.0  # segmenter

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValidationError("fusion weights must be non-negative with a positive sum")


def fuse(prop: SemanticState, deep: SemanticState, weights: FusionWeights = FusionWeights(),
         schema: Optional[LabelSchema] = None) -> SemanticState:
    """Weighted vote between propagation and segmenter; ties go to the segmenter.

    Where both modules agree the confidence is their weight-averaged
    confidence; otherwise it is the winning module's confidence.
    """
    if len(prop) != len(deep):
        raise ValidationError(f"{len(prop)} propagated vs {len(deep)} segmented points")
    pl, pc = prop.labels, prop.confidence
    dl, dc = deep.labels, deep.confidence
    has_p, has_d = pl != UNKNOWN, dl != UNKNOWN
    missing = ~(has_p | has_d)
    if missing.any():
        raise ValidationError(f"{int(missing.sum())} points have neither a propagated nor a segmented label "
                              f"(first: {int(np.flatnonzero(missing)[0])})")
    if schema is not None:
        top = max(pl.max(initial=-1), dl.max(initial=-1))
        if top >= schema.num_labels:
            raise ValidationError(f"label {top} outside schema")
    score_p = weights.w1 * pc
    score_d = weights.w2 * dc
    take_deep = has_d & (~has_p | (score_d >= score_p))
    labels = np.where(take_deep, dl, pl)
    conf = np.where(take_deep, dc, pc)
    agree = has_p & has_d & (pl == dl)
    conf = np.where(agree, (weights.w1 * pc + weights.w2 * dc) / (weights.w1 + weights.w2), conf)
    return SemanticState(labels, np.clip(conf, 0.0, 1.0))


STAGES = ("accumulate", "propagate", "cluster", "segment", "fuse")


@dataclass
class FrameResult:
    state: SemanticState
    propagated: SemanticState
    segmented: SemanticState
    timings: dict[str, float]
    clusters: list[Cluster] = field(default_factory=list)
    accumulated_size: int = 0

    @property
    def total_time(self) -> float:
        return sum(self.timings.values())


class Pipeline:
    """Stateful per-sequence runner: accumulate, propagate, cluster, segment, fuse.

    Frames must be fed in index order. The window keeps the final labels of
    the last ``num_frames`` processed frames.
    """

    def __init__(self, config: PipelineConfig, schema: LabelSchema, segmenter: Segmenter):
        if segmenter.num_classes != schema.num_labels:
            raise ValidationError("segmenter and schema disagree on the number of classes")
        self.config = config
        self.schema = schema
        self.segmenter = segmenter
        self.window: deque[tuple[Frame, SemanticState]] = deque()
        self.frames_done = 0
        self.stage_totals = dict.fromkeys(STAGES, 0.0)

    @property
    def accumulate_params(self) -> AccumulateParams:
        c = self.config
        return AccumulateParams(c.num_frames, c.stride, c.voxel_size, c.crop_radius)

    @property
    def propagation_params(self) -> PropagationParams:
        return PropagationParams(self.config.d_prop, self.config.weight_cutoff)

    @property
    def densify_params(self) -> DensifyParams:
        return DensifyParams(self.config.dense_voxel_size, self.config.num_clusters)

    def process_frame(self, frame: Frame) -> FrameResult:
        timings = {}
        n = len(frame.cloud)
        clock = time.perf_counter

        t0 = clock()
        acc = accumulate(list(self.window), frame, self.accumulate_params)
        world = transform(frame.cloud, frame.pose).points
        timings["accumulate"] = clock() - t0

        t0 = clock()
        prop = propagate(world, acc, self.schema, self.propagation_params)
        timings["propagate"] = clock() - t0

        t0 = clock()
        pending = np.flatnonzero(prop.labels == UNKNOWN)
        dense_grid = VoxelGrid(acc.cloud.points, self.config.dense_voxel_size) if len(pending) else None
        clusters = clusterize(world, pending, acc.cloud.points, self.densify_params,
                              seed=self.config.seed + self.frames_done, dense_grid=dense_grid)
        timings["cluster"] = clock() - t0

        t0 = clock()
        deep = self._segment(frame, world, acc, clusters, n)
        timings["segment"] = clock() - t0

        t0 = clock()
        final = fuse(prop, deep, FusionWeights(self.config.w1, self.config.w2), self.schema)
        self._push(frame, final)
        timings["fuse"] = clock() - t0

        for k, v in timings.items():
            self.stage_totals[k] += v
        self.frames_done += 1
        return FrameResult(final, prop, deep, timings, clusters, len(acc))

    def _segment(self, frame: Frame, world: np.ndarray, acc: AccumulatedCloud,
                 clusters: list[Cluster], n: int) -> SemanticState:
        ids, blocks = [], []
        acc_frame, acc_index = acc.cloud.frame, acc.cloud.index
        k = self.schema.num_labels
        for cl in clusters:
            support = cl.support_indices
            own = (acc_frame[support] == frame.index) & np.isin(acc_index[support], cl.seed_indices)
            support = support[~own]
            pts = np.concatenate([world[cl.seed_indices], acc.cloud.points[support]])
            frames = np.concatenate([np.full(len(cl.seed_indices), frame.index), acc_frame[support]])
            indices = np.concatenate([cl.seed_indices, acc_index[support]])
            scores = check_scores(self.segmenter(pts, frames, indices), len(pts), k)
            current = frames == frame.index
            ids.append(indices[current])
            blocks.append(scores[current])
        if not ids:
            return SemanticState.unknown(n)
        return aggregate_scores(np.concatenate(ids), np.concatenate(blocks), n)

    def _push(self, frame: Frame, state: SemanticState) -> None:
        self.window.append((frame, state))
        horizon = frame.index - self.config.num_frames
        while self.window and self.window[0][0].index < horizon:
            self.window.popleft()

    @property
    def fps(self) -> float:
        total = sum(self.stage_totals.values())
        return self.frames_done / total if total > 0 else float("nan")

    def timing_report(self) -> str:
        lines = [f"{'stage':<12}{'total s':>10}{'ms/frame':>10}"]
        for stage in STAGES:
            t = self.stage_totals[stage]
            per = 1000.0 * t / self.frames_done if self.frames_done else float("nan")
            lines.append(f"{stage:<12}{t:>10.3f}{per:>10.1f}")
        lines.append(f"frames={self.frames_done} fps={self.fps:.2f}")
        return "\n".join(lines)


def process_frame(pipeline: Pipeline, frame: Frame) -> FrameResult:
    return pipeline.process_frame(frame)
