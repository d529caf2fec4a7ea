"""Run configuration: architecture sizes, loss weights, optimization knobs.

Configs load from a flat key=value text file; the BAM_SEED environment
variable overrides the seed when set.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path


@dataclass
class Config:
    # architecture
    dim: int = 256
    heads: int = 8
    num_queries: int = 10
    num_points: int = 3
    enc_layers: int = 2
    dec_layers: int = 2
    dropout: float = 0.1
    # loss weights
    l1_weight: float = 10.0
    giou_weight: float = 1.0
    qual_weight: float = 2.0
    regul_weight: float = 1.0
    sal_weight: float | None = None  # None = 1 with saliency labels, 4 without
    margin: float = 0.2
    tau: float = 0.5
    boundary_radius_ratio: float = 0.1
    deep_supervision: bool = True
    # optimization
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    weight_decay: float = 1e-4
    grad_clip: float = 0.1
    seed: int = 0
    # data
    video_feat_dim: int = 32
    text_feat_dim: int = 32
    clip_stride: float = 2.0  # seconds per clip
    max_clips: int | None = None

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")
        for name in ("dim", "heads", "num_queries", "num_points", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def resolved_sal_weight(self, has_saliency_labels: bool) -> float:
        if self.sal_weight is not None:
            return self.sal_weight
        return 1.0 if has_saliency_labels else 4.0

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(raw, fields[key].type)
        cfg = cls(**values)
        return cfg.with_env_overrides()

    def with_env_overrides(self) -> "Config":
        seed = os.environ.get("BAM_SEED")
        if seed is not None:
            return dataclasses.replace(self, seed=int(seed))
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _parse_value(raw: str, annotation: str):
    if raw.lower() in ("none", ""):
        return None
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    ann = str(annotation)
    if "float" in ann:
        return float(raw)
    if "int" in ann:
        return int(raw)
    if "bool" in ann:
        raise ValueError(f"expected true/false, got {raw!r}")
    return raw
