"""Experiment configuration: strict parsing, defaults, and resolution.

Configs are JSON. Parsing is strict: unknown keys fail with their full
dotted path, so a typo can never silently fall back to a default. Every
optional field has a documented default, and ``resolve`` pins all of
them (including ones that depend on the dataset, like the cluster count
inferred from labels) so the echoed config re-runs identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import (
    AugmentationPipeline,
    TransformSpec,
    default_image_pipeline,
    default_vector_pipeline,
)
from .data import (
    Dataset,
    ImageGeometry,
    VectorGeometry,
    gaussian_blobs,
    load_csv,
    load_idx,
    standardize,
    two_moons,
)
from .errors import ConfigError
from .model import ModelConfig

__all__ = [
    "DatasetConfig",
    "ModelSection",
    "LossSection",
    "TrainingSection",
    "AugmentationSection",
    "ExperimentConfig",
    "load_config",
    "build_dataset",
    "build_pipeline",
    "ABLATION_MODES",
]

ABLATION_MODES = ("full", "ich_only", "cch_only", "raw_second_view", "raw_both_views")

# Transform parameter keys accepted per kind, beyond "kind"/"probability".
TRANSFORM_PARAM_KEYS = {
    "gaussian_jitter": {"sigma"},
    "coordinate_mask": {"fraction"},
    "scale_jitter": {"low", "high"},
    "resized_crop": {"min_area_fraction"},
    "horizontal_flip": set(),
    "brightness_jitter": {"low", "high"},
    "gaussian_blur": {"sigma"},
    "identity": set(),
}

DATASET_KIND_KEYS = {
    "gaussian_blobs": {"k", "n_per", "dim", "separation", "sigma", "seed"},
    "two_moons": {"n", "noise", "seed"},
    "csv": {"path", "label_column"},
    "idx": {"images_path", "labels_path"},
}


def _check_keys(section: dict, allowed, required, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"config: {path or 'top level'} must be an object")
    for key in section:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"config: unknown key {where!r}")
    for key in required:
        if key not in section:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"config: missing required key {where!r}")


def _require(condition: bool, path: str, message: str):
    if not condition:
        raise ConfigError(f"config: {path}: {message}")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    params: dict = field(default_factory=dict)
    standardize: bool | None = None  # None: on for vector data, off for images

    @classmethod
    def from_dict(cls, raw: dict, path: str = "dataset") -> "DatasetConfig":
        _check_keys(raw, {"kind", "standardize", *sum(map(list, DATASET_KIND_KEYS.values()), [])}, {"kind"}, path)
        kind = raw["kind"]
        if kind not in DATASET_KIND_KEYS:
            raise ConfigError(
                f"config: {path}.kind: unknown dataset kind {kind!r}, "
                f"expected one of {sorted(DATASET_KIND_KEYS)}"
            )
        params = {}
        for key, value in raw.items():
            if key in ("kind", "standardize"):
                continue
            if key not in DATASET_KIND_KEYS[kind]:
                raise ConfigError(f"config: {path}.{key}: not a parameter of {kind!r}")
            params[key] = value
        return cls(kind=kind, params=params, standardize=raw.get("standardize"))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, **self.params}
        out["standardize"] = self.standardize
        return out


@dataclass(frozen=True)
class ModelSection:
    encoder_widths: tuple = (64, 64)
    instance_dim: int = 128
    head_hidden_dim: int | None = None
    cluster_count: int | None = None  # None: inferred from dataset labels
    init_seed: int | None = None  # None: the experiment seed

    @classmethod
    def from_dict(cls, raw: dict, path: str = "model") -> "ModelSection":
        allowed = {
            "encoder_widths",
            "instance_dim",
            "head_hidden_dim",
            "cluster_count",
            "init_seed",
        }
        _check_keys(raw, allowed, set(), path)
        out = cls(
            encoder_widths=tuple(raw.get("encoder_widths", cls.encoder_widths)),
            instance_dim=raw.get("instance_dim", cls.instance_dim),
            head_hidden_dim=raw.get("head_hidden_dim"),
            cluster_count=raw.get("cluster_count"),
            init_seed=raw.get("init_seed"),
        )
        _require(len(out.encoder_widths) >= 1, f"{path}.encoder_widths", "needs one width")
        return out

    def to_dict(self) -> dict:
        return {
            "encoder_widths": list(self.encoder_widths),
            "instance_dim": self.instance_dim,
            "head_hidden_dim": self.head_hidden_dim,
            "cluster_count": self.cluster_count,
            "init_seed": self.init_seed,
        }

    def model_config(self, input_dim: int) -> ModelConfig:
        if self.cluster_count is None or self.init_seed is None:
            raise ConfigError("model section must be resolved before building the model")
        return ModelConfig(
            input_dim=input_dim,
            encoder_widths=self.encoder_widths,
            cluster_count=self.cluster_count,
            instance_dim=self.instance_dim,
            head_hidden_dim=self.head_hidden_dim,
            init_seed=self.init_seed,
        )


@dataclass(frozen=True)
class LossSection:
    instance_temperature: float = 0.5
    cluster_temperature: float = 1.0
    entropy_weight: float = 1.0
    exclude_self_similarity: bool = True
    literal_entropy_sign: bool = False

    @classmethod
    def from_dict(cls, raw: dict, path: str = "losses") -> "LossSection":
        allowed = {
            "instance_temperature",
            "cluster_temperature",
            "entropy_weight",
            "exclude_self_similarity",
            "literal_entropy_sign",
        }
        _check_keys(raw, allowed, set(), path)
        out = cls(**{k: raw.get(k, getattr(cls, k)) for k in allowed})
        _require(out.instance_temperature > 0, f"{path}.instance_temperature", "must be positive")
        _require(out.cluster_temperature > 0, f"{path}.cluster_temperature", "must be positive")
        return out

    def to_dict(self) -> dict:
        return {
            "instance_temperature": self.instance_temperature,
            "cluster_temperature": self.cluster_temperature,
            "entropy_weight": self.entropy_weight,
            "exclude_self_similarity": self.exclude_self_similarity,
            "literal_entropy_sign": self.literal_entropy_sign,
        }


@dataclass(frozen=True)
class TrainingSection:
    batch_size: int = 64
    epochs: int = 200
    learning_rate: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def from_dict(cls, raw: dict, path: str = "training") -> "TrainingSection":
        allowed = {"batch_size", "epochs", "learning_rate", "beta1", "beta2", "epsilon"}
        _check_keys(raw, allowed, set(), path)
        out = cls(**{k: raw.get(k, getattr(cls, k)) for k in allowed})
        _require(out.batch_size >= 2, f"{path}.batch_size", "must be at least 2")
        _require(out.epochs >= 0, f"{path}.epochs", "must be nonnegative")
        _require(out.learning_rate > 0, f"{path}.learning_rate", "must be positive")
        _require(0 <= out.beta1 < 1, f"{path}.beta1", "must be in [0, 1)")
        _require(0 <= out.beta2 < 1, f"{path}.beta2", "must be in [0, 1)")
        _require(out.epsilon > 0, f"{path}.epsilon", "must be positive")
        return out

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }


@dataclass(frozen=True)
class AugmentationSection:
    preset: str | None = "default"  # None once transforms are explicit
    transforms: tuple | None = None  # of dicts: {"kind", "probability", params...}

    @classmethod
    def from_dict(cls, raw: dict, path: str = "augmentation") -> "AugmentationSection":
        _check_keys(raw, {"preset", "transforms"}, set(), path)
        preset = raw.get("preset")
        transforms = raw.get("transforms")
        if preset is not None and transforms is not None:
            raise ConfigError(
                f"config: {path}: give either 'preset' or 'transforms', not both"
            )
        if transforms is None:
            if preset is not None and preset != "default":
                raise ConfigError(f"config: {path}.preset: unknown preset {preset!r}")
            return cls(preset="default", transforms=None)
        checked = []
        for i, entry in enumerate(transforms):
            entry_path = f"{path}.transforms[{i}]"
            if not isinstance(entry, dict) or "kind" not in entry:
                raise ConfigError(f"config: {entry_path}: needs a 'kind'")
            kind = entry["kind"]
            if kind not in TRANSFORM_PARAM_KEYS:
                raise ConfigError(
                    f"config: {entry_path}.kind: unknown transform {kind!r}"
                )
            # Explicit transform lists pin every parameter: no per-kind
            # defaults, so the resolved echo round-trips exactly.
            allowed = {"kind", "probability", *TRANSFORM_PARAM_KEYS[kind]}
            _check_keys(entry, allowed, allowed, entry_path)
            checked.append(dict(entry))
        return cls(preset=None, transforms=tuple(checked))

    def to_dict(self) -> dict:
        if self.transforms is not None:
            return {"transforms": [dict(t) for t in self.transforms]}
        return {"preset": self.preset}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    model: ModelSection = ModelSection()
    losses: LossSection = LossSection()
    training: TrainingSection = TrainingSection()
    augmentation: AugmentationSection = AugmentationSection()
    seed: int = 0
    ablation: str = "full"
    out_dir: str | None = None

    def __post_init__(self):
        if self.ablation not in ABLATION_MODES:
            raise ConfigError(
                f"config: ablation: unknown mode {self.ablation!r}, "
                f"expected one of {ABLATION_MODES}"
            )

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        allowed = {
            "dataset",
            "model",
            "losses",
            "training",
            "augmentation",
            "seed",
            "ablation",
            "out_dir",
        }
        _check_keys(raw, allowed, {"dataset"}, "")
        return cls(
            dataset=DatasetConfig.from_dict(raw["dataset"]),
            model=ModelSection.from_dict(raw.get("model", {})),
            losses=LossSection.from_dict(raw.get("losses", {})),
            training=TrainingSection.from_dict(raw.get("training", {})),
            augmentation=AugmentationSection.from_dict(raw.get("augmentation", {})),
            seed=int(raw.get("seed", 0)),
            ablation=raw.get("ablation", "full"),
            out_dir=raw.get("out_dir"),
        )

    def resolve(self, dataset: Dataset) -> "ExperimentConfig":
        """Pin every dataset-dependent or deferred default so the echoed
        config is complete and re-runnable."""
        cluster_count = self.model.cluster_count
        if cluster_count is None:
            if dataset.labels is None:
                raise ConfigError(
                    "config: model.cluster_count must be set for unlabeled data"
                )
            cluster_count = int(np.unique(dataset.labels).size)
        init_seed = self.model.init_seed
        if init_seed is None:
            init_seed = self.seed
        head_hidden = self.model.head_hidden_dim
        if head_hidden is None:
            head_hidden = self.model.encoder_widths[-1]
        standardized = self.dataset.standardize
        if standardized is None:
            standardized = isinstance(dataset.geometry, VectorGeometry)
        transforms = self.augmentation.transforms
        if transforms is None:
            pipeline = _default_pipeline_for(dataset.geometry)
            transforms = tuple(_transform_to_dict(s, p) for s, p in pipeline.transforms)
        return replace(
            self,
            dataset=replace(self.dataset, standardize=standardized),
            model=replace(
                self.model,
                cluster_count=cluster_count,
                init_seed=init_seed,
                head_hidden_dim=head_hidden,
            ),
            augmentation=AugmentationSection(preset=None, transforms=transforms),
        )

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "losses": self.losses.to_dict(),
            "training": self.training.to_dict(),
            "augmentation": self.augmentation.to_dict(),
            "seed": self.seed,
            "ablation": self.ablation,
            "out_dir": self.out_dir,
        }


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config: {path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}"
        ) from exc
    return ExperimentConfig.from_dict(raw)


def build_dataset(config: DatasetConfig) -> Dataset:
    """Generate or load the dataset, applying standardization per the
    (possibly still-default) flag."""
    kind = config.kind
    params = dict(config.params)
    if kind == "gaussian_blobs":
        dataset = gaussian_blobs(**params)
    elif kind == "two_moons":
        dataset = two_moons(**params)
    elif kind == "csv":
        dataset = load_csv(params["path"], label_column=params.get("label_column"))
    elif kind == "idx":
        dataset = load_idx(params["images_path"], params.get("labels_path"))
    else:
        raise ConfigError(f"config: dataset.kind: unknown dataset kind {kind!r}")
    flag = config.standardize
    if flag is None:
        flag = isinstance(dataset.geometry, VectorGeometry)
    if flag:
        samples, _, _ = standardize(dataset.samples)
        dataset = Dataset(samples, dataset.geometry, dataset.labels, dataset.name)
    return dataset


def _default_pipeline_for(geometry) -> AugmentationPipeline:
    if isinstance(geometry, ImageGeometry):
        return default_image_pipeline(geometry)
    return default_vector_pipeline(geometry)


def _transform_to_dict(spec: TransformSpec, probability: float) -> dict:
    out = {"kind": spec.kind, "probability": probability}
    for key in TRANSFORM_PARAM_KEYS[spec.kind]:
        out[key] = getattr(spec, key)
    return out


def _transform_from_dict(entry: dict) -> tuple:
    kind = entry["kind"]
    params = {k: v for k, v in entry.items() if k not in ("kind", "probability")}
    factory = getattr(TransformSpec, kind)
    return factory(**params), float(entry["probability"])


def build_pipeline(section: AugmentationSection, geometry) -> AugmentationPipeline:
    if section.transforms is None:
        return _default_pipeline_for(geometry)
    transforms = tuple(_transform_from_dict(entry) for entry in section.transforms)
    return AugmentationPipeline(transforms=transforms, geometry=geometry)
