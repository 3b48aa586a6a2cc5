"""Experiment configuration: JSON sections {data, split, compression, backbone, train, ablation}."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backbones import BackboneConfig
from .data import SplitSpec, SyntheticConfig, shift_benchmark
from .errors import ConfigError
from .regularizers import LossWeights

LR_GRID = (1e-4, 3e-4, 5e-4, 1e-3)
WD_GRID = (1e-4, 3e-4, 5e-4, 5e-5, 3e-5, 1e-5)


@dataclass(frozen=True)
class CompressionConfig:
    K: int = 20
    d: int = 24
    d_k: int = 12
    depth: int = 3
    heads: int = 3
    weights: LossWeights = field(default_factory=LossWeights)
    beta_hc: float = 2.0 / 3.0
    gamma: float = -0.1
    delta: float = 1.1
    clamp_mode: str = "clip"
    tau: float = 0.5
    dropout: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 1e-5
    q_lr: float = 1e-2
    max_epochs: int = 20
    patience: int = 3
    batch_size: int = 256
    holdout_fraction: float = 0.1
    seed: int = 0
    grid_search: bool = False
    lr_grid: tuple[float, ...] = LR_GRID
    wd_grid: tuple[float, ...] = WD_GRID

    def __post_init__(self):
        if self.K < 1 or self.d < 1 or self.d_k < 1:
            raise ConfigError("K, d and d_k must be >= 1")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    max_epochs: int = 30
    patience: int = 3
    batch_size: int = 256
    seed: int = 0
    # lr / weight decay picked by validation AUC over the grids
    grid_search: bool = True
    lr_grid: tuple[float, ...] = LR_GRID
    wd_grid: tuple[float, ...] = WD_GRID
    # which logs a backbone without knowledge trains on: everything before T1, or [T0, T1) only
    baseline_data: str = "before_t1"

    def __post_init__(self):
        if self.baseline_data not in ("before_t1", "train_only"):
            raise ConfigError("baseline_data must be 'before_t1' or 'train_only'")


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    schema: str | None = None
    synthetic: SyntheticConfig | None = None


@dataclass(frozen=True)
class AblationConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    k_list: tuple[int, ...] = (5, 10, 15, 20, 25)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitSpec | None = None
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def resolved_split(self) -> SplitSpec:
        if self.split is not None:
            return self.split
        if self.data.synthetic is not None:
            return SplitSpec(self.data.synthetic.T0, self.data.synthetic.T1)
        raise ConfigError("split section is required for file datasets")

    def to_dict(self) -> dict:
        return _to_plain(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _to_plain(obj: Any) -> Any:
    if isinstance(obj, SyntheticConfig):
        return obj.to_dict()
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, d: dict | None, section: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        if k == "weights" and cls is CompressionConfig:
            v = _build(LossWeights, v, "compression.weights")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {section!r} section: {e}") from e


def config_from_dict(d: dict) -> ExperimentConfig:
    known = {"data", "split", "compression", "backbone", "train", "ablation"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    data = d.get("data") or {}
    synth = data.get("synthetic")
    data_cfg = DataConfig(
        path=data.get("path"),
        schema=data.get("schema"),
        synthetic=SyntheticConfig.from_dict(synth) if synth is not None else None,
    )
    if set(data) - {"path", "schema", "synthetic"}:
        raise ConfigError(f"unknown keys in 'data': {sorted(set(data) - {'path', 'schema', 'synthetic'})}")
    return ExperimentConfig(
        data=data_cfg,
        split=_build(SplitSpec, d["split"], "split") if d.get("split") is not None else None,
        compression=_build(CompressionConfig, d.get("compression"), "compression"),
        backbone=_build(BackboneConfig, d.get("backbone"), "backbone"),
        train=_build(TrainConfig, d.get("train"), "train"),
        ablation=_build(AblationConfig, d.get("ablation"), "ablation"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_dict(raw)


def shift_experiment(seed: int = 0) -> ExperimentConfig:
    """Desk-scale shift benchmark with the settings used by the acceptance runs.

    Decoy crosses flip at t=60k. Logs before 60k build the knowledge base,
    [60k, 70k) trains the backbone and the rest is split into valid / test.
    A one-layer encoder and a small lambda1 keep a compression run at a few
    minutes on one core; larger lambda1 values collapse the masks here.
    """
    return ExperimentConfig(
        data=DataConfig(synthetic=shift_benchmark(seed)),
        split=SplitSpec(60_000, 70_000),
        compression=CompressionConfig(K=10, depth=1, max_epochs=15, weights=LossWeights(lambda1=1e-4), seed=seed),
        backbone=BackboneConfig(kind="deepfm"),
        train=TrainConfig(grid_search=False, seed=seed),
        ablation=AblationConfig(seeds=(0, 1, 2, 3, 4), k_list=(1, 5, 10, 20)),
    )
