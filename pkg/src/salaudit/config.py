"""Run configuration: a YAML (or JSON) document mirroring :class:`RunConfig`."""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .perturbation import PERTURBATION_KINDS
from .reliability import LEVELS
from .saliency import NATIVE_METHODS

DEFAULT_L = (20, 40, 60, 80, 100)


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    paths: list[str] = field(default_factory=list)
    n_images: int = 200
    height: int = 16
    width: int = 16
    channels: int = 3
    n_classes: int = 10
    limit: int | None = None

    def input_shape(self) -> tuple[int, int, int]:
        if self.kind == "synthetic":
            return (self.height, self.width, self.channels)
        if self.kind == "cifar10":
            return (32, 32, 3)
        if self.kind == "raw":
            return _raw_header_shape(self.paths[0])
        raise ConfigError(f"unknown dataset kind {self.kind!r}")


@dataclass
class ModelConfig:
    kind: str = "affine-oracle"
    link: str = "identity"
    weight_scale: float | None = None
    manifest: str | None = None
    weights: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    methods: list[str] = field(default_factory=lambda: ["sensitivity", "gradient-x-input", "edge", "random"])
    imports: list[str] = field(default_factory=list)
    baseline_method: str = "edge"
    L: list[int] = field(default_factory=lambda: list(DEFAULT_L))
    perturbations: list[str] = field(default_factory=lambda: list(PERTURBATION_KINDS))
    orders: list[str] = field(default_factory=lambda: ["morf", "lerf"])
    faithfulness_pixels: int = 100
    random_orderings: int = 100
    bootstrap_resamples: int = 10_000
    coverages: list[float] = field(default_factory=lambda: [0.95, 0.999])
    krippendorff_level: str = "ordinal"
    include_random_baseline: bool = False
    classes: list[int] | None = None
    min_confidence: float | None = None
    max_confidence: float | None = None
    out: str = "results"
    threads: int = 1
    write_curves: bool = True

    @property
    def max_L(self) -> int:
        return max(self.L)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self, input_shape: tuple[int, int, int] | None = None) -> None:
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not self.L or any(int(l) < 1 for l in self.L):
            raise ConfigError("L grid must be a non-empty list of positive integers")
        for p in self.perturbations:
            if p not in PERTURBATION_KINDS:
                raise ConfigError(f"unknown perturbation {p!r}; expected one of {PERTURBATION_KINDS}")
        if not self.perturbations:
            raise ConfigError("at least one perturbation kind is required")
        for o in self.orders:
            if o not in ("morf", "lerf"):
                raise ConfigError(f"unknown order {o!r}; expected morf or lerf")
        for m in self.methods:
            if m not in NATIVE_METHODS:
                raise ConfigError(f"unknown native method {m!r}; expected one of {sorted(NATIVE_METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("method ids must be unique")
        if "ground-truth" in self.methods and (self.model.kind != "affine-oracle" or self.model.link != "identity"):
            raise ConfigError("the ground-truth method needs an identity-link affine oracle")
        if self.krippendorff_level not in LEVELS:
            raise ConfigError(f"krippendorff_level must be one of {LEVELS}")
        if self.faithfulness_pixels < 2:
            raise ConfigError("faithfulness_pixels must be at least 2")
        if self.random_orderings < 0:
            raise ConfigError("random_orderings must be non-negative")
        if self.bootstrap_resamples < 1:
            raise ConfigError("bootstrap_resamples must be positive")
        if any(not 0 < c < 1 for c in self.coverages):
            raise ConfigError("coverages must lie in (0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        for name in ("min_confidence", "max_confidence"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.dataset.kind in ("cifar10", "raw") and not self.dataset.paths:
            raise ConfigError(f"{self.dataset.kind} dataset needs 'paths'")
        if self.dataset.kind == "synthetic" and self.model.kind != "affine-oracle":
            raise ConfigError("synthetic datasets are generated together with an affine oracle model")
        if self.model.kind == "network" and not (self.model.manifest and self.model.weights):
            raise ConfigError("network models need 'manifest' and 'weights' paths")
        if self.model.kind == "affine-oracle" and self.dataset.kind != "synthetic" and not self.model.manifest:
            raise ConfigError("an affine oracle for a stored dataset must be loaded from 'manifest' and 'weights'")
        if self.model.kind not in ("affine-oracle", "network"):
            raise ConfigError(f"unknown model kind {self.model.kind!r}")
        if self.model.link not in ("identity", "sigmoid"):
            raise ConfigError(f"unknown link {self.model.link!r}")
        if input_shape is None:
            input_shape = self.dataset.input_shape()
        n_pixels = input_shape[0] * input_shape[1]
        if self.max_L > n_pixels:
            raise ConfigError(f"L={self.max_L} exceeds the {n_pixels} pixels of a {input_shape[0]}x{input_shape[1]} input")
        if self.faithfulness_pixels > n_pixels:
            raise ConfigError(f"faithfulness_pixels={self.faithfulness_pixels} exceeds {n_pixels} pixels")


def _raw_header_shape(path: str) -> tuple[int, int, int]:
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
            if head[:4] != b"RAWT":
                raise ConfigError(f"{path}: not a raw tensor dataset")
            (name_len,) = struct.unpack_from("<H", head, 6)
            fh.read(name_len)
            _, h, w, c = struct.unpack("<4I", fh.read(16))
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from None
    return (h, w, c)


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be a mapping")
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
    return cls(**data)


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    data = {str(k).replace("-", "_"): v for k, v in (data or {}).items()}
    dataset = _build(DatasetConfig, data.pop("dataset", {}) or {}, "dataset")
    model = _build(ModelConfig, data.pop("model", {}) or {}, "model")
    try:
        cfg = _build(RunConfig, data, "config")
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.dataset = dataset
    cfg.model = model
    try:
        cfg.seed = int(cfg.seed)
        cfg.L = sorted({int(l) for l in cfg.L})
        cfg.coverages = [float(c) for c in cfg.coverages]
        cfg.faithfulness_pixels = int(cfg.faithfulness_pixels)
        cfg.random_orderings = int(cfg.random_orderings)
        cfg.bootstrap_resamples = int(cfg.bootstrap_resamples)
        cfg.threads = int(cfg.threads)
        cfg.methods = [str(m) for m in cfg.methods]
        cfg.imports = [str(p) for p in cfg.imports]
        cfg.dataset.paths = [str(p) for p in cfg.dataset.paths]
        if cfg.classes is not None:
            cfg.classes = [int(c) for c in cfg.classes]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config value: {exc}") from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(data or {})
