"""Cross-dataset scoring: label sets, coarse remapping, confusion matrices, IoU reports."""

from __future__ import annotations

import csv
import io as _io
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .cloud import ValidationError
from .propagation import LabelSchema

IGNORE = -1


def _data_text(kind: str, name: str) -> str:
    path = resources.files("labelprop") / "data" / kind / f"{name}.txt"
    if not path.is_file():
        raise ValidationError(f"unknown {kind[:-1]} {name!r}")
    return path.read_text(encoding="utf-8")


def _rows(text: str):
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield lineno, line


@dataclass(frozen=True)
class DatasetLabels:
    """A dataset's evaluation classes and the raw file ids folded into each."""

    name: str
    classes: tuple[str, ...]
    num_dynamic: int
    raw_to_class: Mapping[int, int]

    @property
    def schema(self) -> LabelSchema:
        return LabelSchema(self.classes, self.num_dynamic)

    def class_id(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise ValidationError(f"{self.name} has no class {name!r}") from None

    def to_class(self, raw: np.ndarray) -> np.ndarray:
        """Raw file ids to class ids; ignored ids become ``IGNORE``."""
        raw = np.asarray(raw, dtype=np.int64)
        table = self._lut()
        inside = (raw >= 0) & (raw < len(table))
        out = np.full(raw.shape, -2, dtype=np.int64)
        out[inside] = table[raw[inside]]
        bad = out == -2
        if bad.any():
            raise ValidationError(f"{self.name}: unknown raw label id(s) {sorted(set(raw[bad].tolist()))}")
        return out

    def to_raw(self, class_ids: np.ndarray) -> np.ndarray:
        """Class ids to the smallest raw id of each class; ``IGNORE`` to the first ignore id."""
        class_ids = np.asarray(class_ids, dtype=np.int64)
        first = {}
        for raw, cid in sorted(self.raw_to_class.items()):
            first.setdefault(cid, raw)
        table = np.array([first[c] for c in range(len(self.classes))] + [first.get(IGNORE, 0)], dtype=np.int64)
        if class_ids.size and (class_ids.min() < IGNORE or class_ids.max() >= len(self.classes)):
            raise ValidationError(f"{self.name}: class id outside [-1, {len(self.classes)})")
        return table[class_ids]

    def _lut(self) -> np.ndarray:
        table = np.full(max(self.raw_to_class) + 1, -2, dtype=np.int64)
        for raw, cid in self.raw_to_class.items():
            table[raw] = cid
        return table


@lru_cache(maxsize=None)
def load_dataset(name: str) -> DatasetLabels:
    classes, raw_to_class = [], {}
    num_dynamic, seen_static = 0, False
    for lineno, line in _rows(_data_text("datasets", name)):
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise ValidationError(f"{name}.txt:{lineno}: expected 'class | kind | raw ids'")
        cname, kind, ids = parts
        if cname == "ignore":
            cid = IGNORE
        else:
            if kind == "dynamic":
                if seen_static:
                    raise ValidationError(f"{name}.txt:{lineno}: dynamic classes must precede static ones")
                num_dynamic += 1
            elif kind == "static":
                seen_static = True
            else:
                raise ValidationError(f"{name}.txt:{lineno}: kind must be dynamic or static")
            cid = len(classes)
            classes.append(cname)
        for raw in ids.split():
            if int(raw) in raw_to_class:
                raise ValidationError(f"{name}.txt:{lineno}: raw id {raw} listed twice")
            raw_to_class[int(raw)] = cid
    return DatasetLabels(name, tuple(classes), num_dynamic, raw_to_class)


@dataclass(frozen=True)
class LabelMapping:
    """Fine classes of two datasets mapped onto one shared coarse label set.

    ``source_map[i]`` is the coarse id of source class ``i`` (or ``IGNORE``),
    likewise ``target_map``.
    """

    name: str
    source: str
    target: str
    coarse_names: tuple[str, ...]
    source_map: tuple[int, ...]
    target_map: tuple[int, ...]

    @property
    def num_classes(self) -> int:
        return len(self.coarse_names)

    def dataset(self, side: str) -> DatasetLabels:
        return load_dataset(self._side(side)[0])

    def _side(self, side: str) -> tuple[str, tuple[int, ...]]:
        if side == "source":
            return self.source, self.source_map
        if side == "target":
            return self.target, self.target_map
        raise ValidationError(f"side must be 'source' or 'target', got {side!r}")

    def table(self, side: str) -> np.ndarray:
        return np.asarray(self._side(side)[1], dtype=np.int64)

    def coarse_of(self, fine_name: str, side: str = "source") -> str:
        ds = self.dataset(side)
        cid = self._side(side)[1][ds.class_id(fine_name)]
        return "IGNORE" if cid == IGNORE else self.coarse_names[cid]

    @classmethod
    def identity(cls, dataset: str) -> "LabelMapping":
        ds = load_dataset(dataset)
        ids = tuple(range(len(ds.classes)))
        return cls(dataset, dataset, dataset, ds.classes, ids, ids)


def _parse_list(cell: str) -> list[str]:
    return [c.strip() for c in cell.split(",") if c.strip()]


@lru_cache(maxsize=None)
def load_mapping(name: str) -> LabelMapping:
    """Load a shipped mapping by name (``sk_sp``, ``ns_ps``...) or an identity set.

    Dataset names (``semantickitti``...) give the original label set.
    """
    if name in DATASETS:
        return LabelMapping.identity(name)
    header, rows = {}, []
    for lineno, line in _rows(_data_text("mappings", name)):
        if "|" not in line and "=" in line:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise ValidationError(f"{name}.txt:{lineno}: expected 'coarse | source | target'")
        rows.append((lineno, parts[0], _parse_list(parts[1]), _parse_list(parts[2])))
    try:
        src, tgt = load_dataset(header["source"]), load_dataset(header["target"])
    except KeyError as exc:
        raise ValidationError(f"{name}.txt: missing header {exc}") from None

    coarse: list[str] = []
    maps = {"source": {}, "target": {}}
    for lineno, cname, src_names, tgt_names in rows:
        cid = IGNORE if cname == "IGNORE" else len(coarse)
        if cid != IGNORE:
            coarse.append(cname)
        for side, ds, names in (("source", src, src_names), ("target", tgt, tgt_names)):
            for fine in names:
                ds.class_id(fine)
                if fine in maps[side]:
                    raise ValidationError(f"{name}.txt:{lineno}: {ds.name} class {fine!r} mapped twice")
                maps[side][fine] = cid
    for side, ds in (("source", src), ("target", tgt)):
        missing = [c for c in ds.classes if c not in maps[side]]
        if missing:
            raise ValidationError(f"{name}: {ds.name} classes without a mapping: {missing}")
    return LabelMapping(
        name, src.name, tgt.name, tuple(coarse),
        tuple(maps["source"][c] for c in src.classes),
        tuple(maps["target"][c] for c in tgt.classes),
    )


DATASETS = ("semantickitti", "nuscenes", "semanticposs", "pandaset")
MAPPINGS = ("sk_sp", "sk_ns", "sk_ps", "ns_sp", "ns_ps", "ns_sk")


def remap(labels: np.ndarray, mapping: LabelMapping, side: str = "source") -> np.ndarray:
    """Fine class ids of one side (``IGNORE`` allowed) to coarse ids."""
    labels = np.asarray(labels, dtype=np.int64)
    table = mapping.table(side)
    bad = (labels < IGNORE) | (labels >= len(table))
    if bad.any():
        raise ValidationError(f"fine label id(s) {sorted(set(labels[bad].tolist()))} not in mapping {mapping.name}")
    out = np.full(labels.shape, IGNORE, dtype=np.int64)
    known = labels != IGNORE
    out[known] = table[labels[known]]
    return out


def remap_raw(raw: np.ndarray, mapping: LabelMapping, side: str = "source") -> np.ndarray:
    return remap(mapping.dataset(side).to_class(raw), mapping, side)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are truth, columns prediction; ``missed[c]`` counts class-c points predicted IGNORE."""

    counts: np.ndarray
    missed: np.ndarray
    ignored: int = 0

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64), np.zeros(num_classes, dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.missed.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.missed + other.missed, self.ignored + other.ignored)


def confusion(truth: np.ndarray, pred: np.ndarray, num_classes: int) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValidationError(f"truth has {truth.size} points, prediction {pred.size}")
    for arr, what in ((truth, "truth"), (pred, "prediction")):
        if arr.size and (arr.min() < IGNORE or arr.max() >= num_classes):
            raise ValidationError(f"{what} coarse id outside [-1, {num_classes})")
    valid = truth != IGNORE
    t, p = truth[valid], pred[valid]
    hit = p != IGNORE
    counts = np.bincount(t[hit] * num_classes + p[hit], minlength=num_classes * num_classes)
    missed = np.bincount(t[~hit], minlength=num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes).astype(np.int64),
                           missed.astype(np.int64), int((~valid).sum()))


@dataclass(frozen=True, eq=False)
class IoUResult:
    per_class: np.ndarray  # NaN where undefined
    miou: float  # fraction; NaN when no class is evaluable

    @property
    def evaluable(self) -> bool:
        return not math.isnan(self.miou)

    @property
    def miou_percent(self) -> float:
        return round(100.0 * self.miou, 1) if self.evaluable else math.nan


def iou(matrix: ConfusionMatrix, zero_union: str = "exclude") -> IoUResult:
    """Per-class ``TP / (TP + FP + FN)`` and their mean.

    ``zero_union="exclude"`` leaves classes absent from truth and prediction
    out of the mean; ``"zero"`` counts them as 0.
    """
    if zero_union not in ("exclude", "zero"):
        raise ValidationError("zero_union must be 'exclude' or 'zero'")
    c = matrix.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp + matrix.missed
    union = tp + fp + fn
    per_class = np.full(len(c), np.nan)
    np.divide(tp, union, out=per_class, where=union > 0)
    if zero_union == "zero":
        scored = np.where(union > 0, per_class, 0.0)
        miou = float(scored.mean()) if matrix.total > 0 and len(c) else math.nan
    else:
        defined = per_class[union > 0]
        miou = float(defined.mean()) if defined.size else math.nan
    return IoUResult(per_class, miou)


def emit_report(results: Mapping[str, IoUResult], class_names: Sequence[str], fmt: str = "text") -> str:
    """Render one row per result, per-class IoU columns then mIoU, all in percent.

    CSV keeps full precision so it parses back exactly; text rounds to one
    decimal like published tables.
    """
    header = ["name", *class_names, "mIoU"]
    rows = []
    for name, res in results.items():
        if len(res.per_class) != len(class_names):
            raise ValidationError(f"{name}: {len(res.per_class)} IoUs for {len(class_names)} classes")
        rows.append((name, [100.0 * v for v in res.per_class], 100.0 * res.miou))
    if fmt == "csv":
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for name, vals, m in rows:
            writer.writerow([name, *("" if math.isnan(v) else repr(float(v)) for v in vals), "" if math.isnan(m) else repr(float(m))])
        return buf.getvalue()
    if fmt != "text":
        raise ValidationError(f"unknown report format {fmt!r}")

    def cell(v: float) -> str:
        return "-" if math.isnan(v) else f"{v:.1f}"

    table = [header] + [[name, *(cell(v) for v in vals), cell(m) if not math.isnan(m) else "no evaluable class"]
                        for name, vals, m in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = ["  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths)))
             for r in table]
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> tuple[list[str], dict[str, list[float]]]:
    """Inverse of the CSV report: ``(class names, {row name: [IoU %..., mIoU %]})``."""
    reader = csv.reader(_io.StringIO(text))
    header = next(reader)
    if header[0] != "name" or header[-1] != "mIoU":
        raise ValidationError("not an IoU report")
    out = {}
    for row in reader:
        out[row[0]] = [math.nan if v == "" else float(v) for v in row[1:]]
    return header[1:-1], out
