"""SemanticKITTI-style scan, label, pose and calibration files.

Scans are little-endian float32 records ``(x, y, z, reflectivity)``; labels
are little-endian uint32 with the class id in the lower 16 bits and the
instance id in the upper 16. Prediction stores reuse the label layout plus
an optional ``.conf`` sidecar of little-endian float32 confidences.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .cloud import PointCloud, Pose, ValidationError

DATASET_ROOT_ENV = "LABELPROP_DATASET_ROOT"

_SCAN_DTYPE = np.dtype("<f4")
_LABEL_DTYPE = np.dtype("<u4")


class FormatError(ValidationError):
    """Malformed or truncated dataset file."""


def read_scan(path: str | Path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: {len(raw)} bytes is not a whole number of 16-byte points")
    data = np.frombuffer(raw, dtype=_SCAN_DTYPE).reshape(-1, 4)
    if not np.isfinite(data).all():
        bad = int(np.flatnonzero(~np.isfinite(data).all(axis=1))[0])
        raise FormatError(f"{path}: non-finite value in point {bad}")
    return PointCloud(data[:, :3].astype(np.float64), reflectivity=data[:, 3].astype(np.float64))


def write_scan(path: str | Path, cloud: PointCloud) -> None:
    n = len(cloud)
    data = np.zeros((n, 4), dtype=_SCAN_DTYPE)
    data[:, :3] = cloud.points
    if cloud.reflectivity is not None:
        data[:, 3] = cloud.reflectivity
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data.tobytes())


def read_label_words(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: {len(raw)} bytes is not a whole number of 32-bit labels")
    return np.frombuffer(raw, dtype=_LABEL_DTYPE)


def read_labels(path: str | Path, expected: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(semantic, instance)`` arrays from a ``.label`` file."""
    words = read_label_words(path)
    if expected is not None and len(words) != expected:
        raise FormatError(f"{path}: {len(words)} labels for {expected} points")
    return (words & 0xFFFF).astype(np.int64), (words >> 16).astype(np.int64)


def write_labels(path: str | Path, semantic: np.ndarray, instance: Optional[np.ndarray] = None) -> None:
    semantic = np.asarray(semantic, dtype=np.int64)
    if semantic.size and (semantic.min() < 0 or semantic.max() > 0xFFFF):
        raise ValidationError("semantic ids must fit in 16 unsigned bits")
    words = semantic.astype(np.uint32)
    if instance is not None:
        words |= np.asarray(instance, dtype=np.uint32) << 16
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(words.astype(_LABEL_DTYPE).tobytes())


def read_confidence(path: str | Path, expected: Optional[int] = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: {len(raw)} bytes is not a whole number of float32 values")
    conf = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if expected is not None and len(conf) != expected:
        raise FormatError(f"{path}: {len(conf)} confidences for {expected} points")
    if not np.isfinite(conf).all() or (conf.size and (conf.min() < 0 or conf.max() > 1)):
        raise FormatError(f"{path}: confidences must be finite and in [0, 1]")
    return conf


def write_confidence(path: str | Path, confidence: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(np.asarray(confidence, dtype="<f4").tobytes())


def _parse_matrix_line(values: list[str], where: str) -> np.ndarray:
    if len(values) != 12:
        raise FormatError(f"{where}: expected 12 values, got {len(values)}")
    try:
        m = np.array([float(v) for v in values]).reshape(3, 4)
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None
    out = np.eye(4)
    out[:3] = m
    return out


def read_calibration(path: str | Path) -> np.ndarray:
    """4x4 ``Tr`` (LiDAR to camera) from a KITTI ``calib.txt``."""
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        key, _, rest = line.partition(":")
        if key.strip() == "Tr":
            return _parse_matrix_line(rest.split(), f"{path}:{lineno}")
    raise FormatError(f"{path}: no 'Tr:' entry")


def read_poses(path: str | Path, calibration: str | Path | np.ndarray | None = None) -> list[Pose]:
    """Frame-to-world LiDAR poses; conjugated as ``Tr^-1 P Tr`` when a calibration is given."""
    if calibration is None:
        tr = None
    elif isinstance(calibration, np.ndarray):
        tr = calibration
    else:
        tr = read_calibration(calibration)
    tr_inv = np.linalg.inv(tr) if tr is not None else None
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        m = _parse_matrix_line(line.split(), f"{path}:{lineno}")
        if tr is not None:
            m = tr_inv @ m @ tr
        try:
            poses.append(Pose.from_matrix(m))
        except ValidationError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return poses


def write_poses(path: str | Path, poses: list[Pose]) -> None:
    lines = [" ".join(f"{v:.12e}" for v in p.matrix[:3].reshape(-1)) for p in poses]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def dataset_root() -> Optional[Path]:
    value = os.environ.get(DATASET_ROOT_ENV)
    return Path(value) if value else None


@dataclass
class SequenceDir:
    """A SemanticKITTI-layout sequence: ``velodyne/``, ``labels/``, ``poses.txt``, ``calib.txt``."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @classmethod
    def locate(cls, name: str | Path) -> "SequenceDir":
        """Path as given, else ``$LABELPROP_DATASET_ROOT/sequences/<name>``."""
        path = Path(name)
        if path.is_dir():
            return cls(path)
        root = dataset_root()
        if root is not None and (root / "sequences" / str(name)).is_dir():
            return cls(root / "sequences" / str(name))
        raise FileNotFoundError(f"sequence {name!r} not found (set {DATASET_ROOT_ENV})")

    @property
    def frame_ids(self) -> list[int]:
        return sorted(int(p.stem) for p in (self.root / "velodyne").glob("*.bin"))

    def scan_path(self, i: int) -> Path:
        return self.root / "velodyne" / f"{i:06d}.bin"

    def label_path(self, i: int) -> Path:
        return self.root / "labels" / f"{i:06d}.label"

    def has_labels(self) -> bool:
        return (self.root / "labels").is_dir()

    def poses(self, conjugate: bool = True) -> list[Pose]:
        calib = self.root / "calib.txt"
        return read_poses(self.root / "poses.txt", calib if conjugate and calib.exists() else None)


class PredictionStore:
    """Per-frame predictions at ``<root>/<sequence>/<frame:06d>.label`` (+ ``.conf``).

    ``id_map`` translates stored class ids to schema ids (``-1`` for ids that
    carry no class).
    """

    def __init__(self, root: str | Path, sequence: str = "00", id_map=None):
        self.root = Path(root)
        self.sequence = str(sequence)
        self.id_map = id_map
        self._cache: dict[int, tuple[np.ndarray, Optional[np.ndarray]]] = {}

    def _dir(self) -> Path:
        return self.root / self.sequence

    def label_path(self, frame: int) -> Path:
        return self._dir() / f"{frame:06d}.label"

    def conf_path(self, frame: int) -> Path:
        return self._dir() / f"{frame:06d}.conf"

    def load(self, frame: int) -> tuple[np.ndarray, Optional[np.ndarray]]:
        if frame not in self._cache:
            path = self.label_path(frame)
            if not path.exists():
                raise KeyError(f"no prediction for sequence {self.sequence} frame {frame} ({path})")
            labels, _ = read_labels(path)
            if self.id_map is not None:
                labels = self.id_map(labels)
            conf = None
            if self.conf_path(frame).exists():
                conf = read_confidence(self.conf_path(frame), expected=len(labels))
            self._cache[frame] = (labels, conf)
        return self._cache[frame]

    def lookup(self, frames: np.ndarray, indices: np.ndarray) -> tuple[np.ndarray, Optional[np.ndarray]]:
        frames = np.asarray(frames, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        labels = np.empty(len(frames), dtype=np.int64)
        conf = np.ones(len(frames))
        any_conf = False
        for f in np.unique(frames):
            sel = frames == f
            lab, c = self.load(int(f))
            idx = indices[sel]
            if idx.size and (idx.min() < 0 or idx.max() >= len(lab)):
                bad = int(idx[(idx < 0) | (idx >= len(lab))][0])
                raise KeyError(f"no prediction for sequence {self.sequence} frame {int(f)} point {bad}")
            labels[sel] = lab[idx]
            if c is not None:
                conf[sel] = c[idx]
                any_conf = True
        return labels, (conf if any_conf else None)

    def write(self, frame: int, labels: np.ndarray, confidence: Optional[np.ndarray] = None) -> None:
        write_labels(self.label_path(frame), labels)
        if confidence is not None:
            write_confidence(self.conf_path(frame), confidence)
