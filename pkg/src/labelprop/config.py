"""Pipeline configuration: defaults, presets and the ``key = value`` file format."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .cloud import ValidationError

PRESETS = {
    "semantickitti": {"num_clusters": 10, "stride": 1},
    "nuscenes": {"num_clusters": 20, "stride": 5},
}


@dataclass(frozen=True)
class PipelineConfig:
    voxel_size: float = 0.05       # v_s, grid subsampling and search voxels
    d_prop: float = 0.30           # propagation radius
    dense_voxel_size: float = 2.0  # V_c, densification voxels
    num_clusters: int = 10         # N_c
    num_frames: int = 20           # N_f, span of the accumulation window
    stride: int = 1
    crop_radius: float = 60.0
    weight_cutoff: float = 0.5
    w1: float = 0.0
    w2: float = 1.0
    dataset: str = "semantickitti"
    backend: str = "oracle"
    noise: float = 0.0
    constant_label: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("voxel_size", "d_prop", "dense_voxel_size", "crop_radius"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.num_clusters < 1 or self.stride < 1 or self.num_frames < 0:
            raise ValidationError("num_clusters and stride must be >= 1, num_frames >= 0")
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValidationError("fusion weights must be non-negative with a positive sum")
        if not 0.0 <= self.noise <= 1.0:
            raise ValidationError("noise must lie in [0, 1]")

    @classmethod
    def preset(cls, name: str, **overrides) -> "PipelineConfig":
        try:
            values = dict(PRESETS[name])
        except KeyError:
            raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        if name == "nuscenes":
            values.setdefault("dataset", "nuscenes")
        values.update(overrides)
        return cls(**values)

    def updated(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


def _coerce(kind, raw: str):
    if kind is bool or kind == "bool":
        if raw.strip().lower() in ("1", "true", "yes", "on"):
            return True
        if raw.strip().lower() in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"not a boolean: {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> dict:
    """Read ``key = value`` pairs; ``[section]`` headers are optional and only group keys."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[DEFAULT]\n" + text if not text.lstrip().startswith("[") else text)
    known = {f.name: f.type for f in fields(PipelineConfig)}
    values = {}
    sections = [parser.defaults()] + [parser[s] for s in parser.sections()]
    for section in sections:
        for key, raw in section.items():
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}")
            values[key] = _coerce(known[key], raw)
    return values


def load_config(path: str | Path | None = None, preset: str | None = None, **overrides) -> PipelineConfig:
    """Preset first, then file values, then explicit overrides."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    if preset is not None:
        return PipelineConfig.preset(preset, **values)
    return PipelineConfig(**values)


def dump_config(config: PipelineConfig) -> str:
    lines = ["[pipeline]"]
    lines += [f"{k} = {v}" for k, v in config.as_dict().items()]
    return "\n".join(lines) + "\n"
