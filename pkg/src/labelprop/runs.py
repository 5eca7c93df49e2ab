"""Drivers that tie sequences on disk (or generated ones) to the pipeline."""

from __future__ import annotations

from collections import deque
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .cloud import ValidationError, transform
from .config import PipelineConfig
from .evaluation import DatasetLabels, load_dataset
from .inference import ConstantSegmenter, FileSegmenter, OracleSegmenter, Pipeline, Segmenter
from .io import PredictionStore, SequenceDir, read_labels, read_scan, write_labels, write_poses, write_scan
from .propagation import LabelSchema, PropagationParams, PropagationStats, propagate, propagation_stats
from .sequence import AccumulateParams, Frame, SemanticState, accumulate


def parse_frames(text: Optional[str], available: list[int]) -> list[int]:
    """``"a:b"`` (half-open, either end optional) or ``"a,b,c"`` filtered to available ids."""
    if not text:
        return list(available)
    if ":" in text:
        lo, _, hi = text.partition(":")
        lo_i = int(lo) if lo else -np.inf
        hi_i = int(hi) if hi else np.inf
        return [i for i in available if lo_i <= i < hi_i]
    wanted = {int(t) for t in text.split(",") if t.strip()}
    missing = wanted.difference(available)
    if missing:
        raise ValidationError(f"frames not in sequence: {sorted(missing)}")
    return [i for i in available if i in wanted]


class SequenceSource:
    """Frames and class-id truth of a :class:`SequenceDir` under one dataset's label set."""

    def __init__(self, seq: SequenceDir, dataset: DatasetLabels, conjugate_poses: bool = True):
        self.seq = seq
        self.dataset = dataset
        self.poses = seq.poses(conjugate=conjugate_poses)
        self._truth: dict[int, np.ndarray] = {}

    @property
    def name(self) -> str:
        return self.seq.root.name

    def frame(self, i: int) -> Frame:
        if i >= len(self.poses):
            raise ValidationError(f"frame {i} has no pose ({len(self.poses)} poses)")
        return Frame(read_scan(self.seq.scan_path(i)), self.poses[i], i)

    def truth(self, i: int) -> np.ndarray:
        if i not in self._truth:
            if len(self._truth) > 64:
                self._truth.pop(next(iter(self._truth)))
            raw, _ = read_labels(self.seq.label_path(i))
            self._truth[i] = self.dataset.to_class(raw)
        return self._truth[i]

    def frames(self, ids: Iterable[int]) -> Iterator[tuple[Frame, np.ndarray]]:
        for i in ids:
            frame = self.frame(i)
            truth = self.truth(i)
            if len(truth) != len(frame.cloud):
                raise ValidationError(f"frame {i}: {len(truth)} labels for {len(frame.cloud)} points")
            yield frame, truth


def make_segmenter(config: PipelineConfig, schema: LabelSchema, truth=None,
                   predictions: Optional[PredictionStore] = None) -> Segmenter:
    if config.backend == "oracle":
        if truth is None:
            raise ValidationError("the oracle segmenter needs ground-truth labels")
        return OracleSegmenter(truth, schema.num_labels, config.noise, config.seed)
    if config.backend == "file":
        if predictions is None:
            raise ValidationError("the file segmenter needs a prediction directory")
        return FileSegmenter(predictions, schema.num_labels)
    if config.backend == "constant":
        return ConstantSegmenter(config.constant_label, schema.num_labels)
    raise ValidationError(f"unknown segmenter backend {config.backend!r}")


def truth_fed_propagation(frames: Iterable[tuple[Frame, np.ndarray]], config: PipelineConfig,
                          schema: LabelSchema, backend: Optional[str] = None) -> list[PropagationStats]:
    """Propagate onto every frame from a window labelled with ground truth.

    Returns one :class:`PropagationStats` per frame, in input order.
    """
    params = AccumulateParams(config.num_frames, config.stride, config.voxel_size, config.crop_radius)
    prop = PropagationParams(config.d_prop, config.weight_cutoff)
    window: deque[tuple[Frame, SemanticState]] = deque()
    out = []
    for frame, truth in frames:
        acc = accumulate(list(window), frame, params)
        pred = propagate(transform(frame.cloud, frame.pose), acc, schema, prop, backend=backend)
        out.append(propagation_stats(pred, truth, schema))
        window.append((frame, SemanticState.from_labels(truth)))
        while window and window[0][0].index < frame.index - config.num_frames:
            window.popleft()
    return out


def run_pipeline(frames: Iterable[Frame], pipeline: Pipeline, dataset: DatasetLabels,
                 store: Optional[PredictionStore] = None):
    """Process frames in order, optionally writing raw-id predictions; yields ``(frame, result)``."""
    for frame in frames:
        result = pipeline.process_frame(frame)
        if store is not None:
            store.write(frame.index, dataset.to_raw(result.state.labels), result.state.confidence)
        yield frame, result


def write_sequence(root: str | Path, frames: Iterable[tuple[Frame, np.ndarray]], dataset: DatasetLabels) -> SequenceDir:
    """Write frames and class-id truth in the on-disk sequence layout (poses as-is, no calibration)."""
    seq = SequenceDir(Path(root))
    poses = []
    for frame, truth in frames:
        if frame.index != len(poses):
            raise ValidationError("frames must be numbered 0, 1, 2, ...")
        write_scan(seq.scan_path(frame.index), frame.cloud)
        write_labels(seq.label_path(frame.index), dataset.to_raw(truth))
        poses.append(frame.pose)
    write_poses(seq.root / "poses.txt", poses)
    return seq


def semantickitti() -> DatasetLabels:
    return load_dataset("semantickitti")
