"""Geometric propagation of static labels from the accumulated past.

Each current point collects accumulated neighbors within ``d_prop``. A
neighbor ``n`` at squared distance ``d2`` votes for its label with weight
``w = exp(-d2 / sigma**2) * c_n`` provided ``w > weight_cutoff``. The
label with the highest summed weight wins; a winning dynamic label, or no
vote at all, leaves the point unknown.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .cloud import PointCloud, ValidationError
from .sequence import UNKNOWN, AccumulatedCloud, SemanticState


@dataclass(frozen=True)
class LabelSchema:
    """Label set whose first ``num_dynamic`` ids are dynamic, the rest static."""

    names: tuple[str, ...]
    num_dynamic: int

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not 0 <= self.num_dynamic <= len(self.names):
            raise ValidationError(f"num_dynamic={self.num_dynamic} outside [0, {len(self.names)}]")

    @property
    def num_labels(self) -> int:
        return len(self.names)

    def is_static(self, labels: np.ndarray) -> np.ndarray:
        return np.asarray(labels) >= self.num_dynamic

    def is_dynamic(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels)
        return (labels >= 0) & (labels < self.num_dynamic)


def sigma_from_dprop(d_prop: float) -> float:
    """Gaussian bandwidth for which a full-confidence neighbor at ``d_prop`` weighs 0.5."""
    if not d_prop > 0:
        raise ValidationError(f"d_prop must be positive, got {d_prop}")
    return d_prop / math.sqrt(math.log(2.0))


@dataclass(frozen=True)
class PropagationParams:
    d_prop: float = 0.30
    weight_cutoff: float = 0.5
    sigma: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma", sigma_from_dprop(self.d_prop))


def propagate(current: PointCloud | np.ndarray, acc: AccumulatedCloud, schema: LabelSchema,
              params: PropagationParams = PropagationParams(), backend: str | None = None,
              return_score: bool = False):
    """Propagate accumulated static labels onto ``current`` (world coordinates).

    Stored confidence is the Gaussian-weighted mean of the winning label's
    surviving neighbor confidences. Argmax ties go to the smaller label id.
    The weight is evaluated as ``exp(-ln2 * d2 / d_prop**2)``, algebraically
    identical to the sigma form but exact at ``d2 == d_prop**2``.

    With ``return_score`` the summed weight of each winning label is
    returned as well, as ``(state, score)``.
    """
    queries = current.points if isinstance(current, PointCloud) else np.asarray(current, dtype=np.float64)
    labels, conf = acc.semantics.labels, acc.semantics.confidence
    if labels.size:
        if labels.max() >= schema.num_labels:
            bad = int(labels[labels >= schema.num_labels][0])
            raise ValidationError(f"accumulated label {bad} outside schema of {schema.num_labels} labels")
        if ((labels == UNKNOWN) & (conf > 0)).any():
            raise ValidationError("accumulated point with unknown label but positive confidence")
    grid = acc.search_grid
    out_labels, out_conf, score = kernels.propagate(
        grid.sorted_points, grid.sorted_lin, grid.kmin, grid.dims, grid.voxel_size,
        labels[grid.order], conf[grid.order], queries,
        params.d_prop, params.weight_cutoff, schema.num_labels, schema.num_dynamic, backend=backend,
    )
    state = SemanticState(out_labels, np.clip(out_conf, 0.0, 1.0))
    return (state, score) if return_score else state


@dataclass(frozen=True)
class PropagationStats:
    """Raw counts behind the propagation quality figures; ``+`` merges frames."""

    num_static: int = 0
    static_covered: int = 0
    static_correct: int = 0
    num_dynamic: int = 0
    dynamic_covered: int = 0

    def __add__(self, other: "PropagationStats") -> "PropagationStats":
        return PropagationStats(*(a + b for a, b in zip(astuple(self), astuple(other))))

    @property
    def static_coverage(self) -> float:
        return self.static_covered / self.num_static if self.num_static else 0.0

    @property
    def static_accuracy(self) -> float:
        """NaN when no static point was covered."""
        return self.static_correct / self.static_covered if self.static_covered else math.nan

    @property
    def dynamic_mislabel_rate(self) -> float:
        return self.dynamic_covered / self.num_dynamic if self.num_dynamic else 0.0

    @property
    def has_coverage(self) -> bool:
        return self.static_covered > 0


def propagation_stats(predicted: SemanticState | np.ndarray, truth: Sequence[int] | np.ndarray,
                      schema: LabelSchema) -> PropagationStats:
    """Coverage/accuracy on truly-static points and mislabel rate on dynamic ones.

    Points whose truth is ``-1`` are ignored.
    """
    pred = predicted.labels if isinstance(predicted, SemanticState) else np.asarray(predicted)
    truth = np.asarray(truth)
    if len(pred) != len(truth):
        raise ValidationError(f"{len(pred)} predictions for {len(truth)} truth labels")
    static = (truth >= schema.num_dynamic) & (truth < schema.num_labels)
    dynamic = schema.is_dynamic(truth)
    covered = pred != UNKNOWN
    return PropagationStats(
        num_static=int(static.sum()),
        static_covered=int((static & covered).sum()),
        static_correct=int((static & covered & (pred == truth)).sum()),
        num_dynamic=int(dynamic.sum()),
        dynamic_covered=int((dynamic & covered).sum()),
    )
