"""Stochastic view generation: correlated sample pairs for training.

A pipeline is an ordered list of (transform, probability) bound to the
dataset's geometry; each transform fires independently with its
probability. Vector data gets noise/mask/scale perturbations; image
data gets crop-resize, flip, brightness, and optional blur. Every
transform preserves dimensionality, so the model never sees a width
change.

Determinism contract: identical (pipeline, input, generator state)
produce byte-identical views. `pair_rng` derives an independent
substream per (seed, epoch, sample), making augmentation results
independent of batch order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ImageGeometry
from .errors import ConfigError, ContractError, ShapeError

__all__ = [
    "TransformSpec",
    "AugmentationPipeline",
    "sample_view",
    "make_pair",
    "pair_rng",
    "default_vector_pipeline",
    "default_image_pipeline",
]

PAIR_MODES = ("two_views", "raw_second", "raw_both")

VECTOR_KINDS = {"gaussian_jitter", "coordinate_mask", "scale_jitter", "identity"}
IMAGE_KINDS = {"resized_crop", "horizontal_flip", "brightness_jitter", "gaussian_blur"}

# Images at or above this side length keep the blur stage by default;
# smaller ones drop it.
BLUR_MIN_SIDE = 64

AUGMENT_STREAM_TAG = 0x41475631


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    sigma: float | None = None
    fraction: float | None = None
    low: float | None = None
    high: float | None = None
    min_area_fraction: float | None = None

    def __post_init__(self):
        if self.kind not in VECTOR_KINDS | IMAGE_KINDS:
            raise ConfigError(f"unknown transform kind {self.kind!r}")

    @classmethod
    def gaussian_jitter(cls, sigma):
        if not sigma > 0:
            raise ConfigError(f"gaussian_jitter: sigma must be positive, got {sigma}")
        return cls("gaussian_jitter", sigma=float(sigma))

    @classmethod
    def coordinate_mask(cls, fraction):
        if not 0 <= fraction < 1:
            raise ConfigError(f"coordinate_mask: fraction must be in [0, 1), got {fraction}")
        return cls("coordinate_mask", fraction=float(fraction))

    @classmethod
    def scale_jitter(cls, low, high):
        if not 0 < low <= high:
            raise ConfigError(f"scale_jitter: need 0 < low <= high, got ({low}, {high})")
        return cls("scale_jitter", low=float(low), high=float(high))

    @classmethod
    def resized_crop(cls, min_area_fraction):
        if not 0 < min_area_fraction <= 1:
            raise ConfigError(
                f"resized_crop: min_area_fraction must be in (0, 1], got {min_area_fraction}"
            )
        return cls("resized_crop", min_area_fraction=float(min_area_fraction))

    @classmethod
    def horizontal_flip(cls):
        return cls("horizontal_flip")

    @classmethod
    def brightness_jitter(cls, low, high):
        if not 0 <= low <= high:
            raise ConfigError(
                f"brightness_jitter: need 0 <= low <= high, got ({low}, {high})"
            )
        return cls("brightness_jitter", low=float(low), high=float(high))

    @classmethod
    def gaussian_blur(cls, sigma):
        if not sigma > 0:
            raise ConfigError(f"gaussian_blur: sigma must be positive, got {sigma}")
        return cls("gaussian_blur", sigma=float(sigma))

    @classmethod
    def identity(cls):
        return cls("identity")


@dataclass(frozen=True)
class AugmentationPipeline:
    transforms: tuple  # of (TransformSpec, apply_probability)
    geometry: object

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        is_image = isinstance(self.geometry, ImageGeometry)
        for spec, probability in self.transforms:
            if not 0 <= probability <= 1:
                raise ConfigError(
                    f"transform {spec.kind}: probability must be in [0, 1], "
                    f"got {probability}"
                )
            if spec.kind in IMAGE_KINDS and not is_image:
                raise ConfigError(
                    f"transform {spec.kind} needs image geometry; dataset is vector-shaped"
                )


def _bilinear_resize(img, out_h, out_w):
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    return (
        img[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
        + img[np.ix_(y1, x0)] * wy * (1 - wx)
        + img[np.ix_(y0, x1)] * (1 - wy) * wx
        + img[np.ix_(y1, x1)] * wy * wx
    )


def _blur_kernel(sigma):
    radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    return kernel / kernel.sum(), radius


def _apply(spec: TransformSpec, x, geometry, rng):
    if spec.kind == "identity":
        return x
    if spec.kind == "gaussian_jitter":
        return x + rng.normal(0.0, spec.sigma, size=x.shape)
    if spec.kind == "coordinate_mask":
        return x * (rng.random(x.shape) >= spec.fraction)
    if spec.kind == "scale_jitter":
        return x * rng.uniform(spec.low, spec.high)
    img = x.reshape(geometry.height, geometry.width)
    if spec.kind == "horizontal_flip":
        return img[:, ::-1].ravel()
    if spec.kind == "brightness_jitter":
        return np.clip(img * rng.uniform(spec.low, spec.high), 0.0, 1.0).ravel()
    if spec.kind == "resized_crop":
        area = rng.uniform(spec.min_area_fraction, 1.0)
        side = np.sqrt(area)
        crop_h = max(1, int(round(geometry.height * side)))
        crop_w = max(1, int(round(geometry.width * side)))
        top = rng.integers(0, geometry.height - crop_h + 1)
        left = rng.integers(0, geometry.width - crop_w + 1)
        crop = img[top : top + crop_h, left : left + crop_w]
        return _bilinear_resize(crop, geometry.height, geometry.width).ravel()
    if spec.kind == "gaussian_blur":
        kernel, radius = _blur_kernel(spec.sigma)
        padded = np.pad(img, ((0, 0), (radius, radius)), mode="symmetric")
        horizontal = np.array([np.convolve(row, kernel, mode="valid") for row in padded])
        padded = np.pad(horizontal, ((radius, radius), (0, 0)), mode="symmetric")
        return np.array(
            [np.convolve(col, kernel, mode="valid") for col in padded.T]
        ).T.ravel()
    raise ConfigError(f"unknown transform kind {spec.kind!r}")


def sample_view(pipeline: AugmentationPipeline, x, rng) -> np.ndarray:
    """One stochastic view of a single instance vector: transforms fire
    independently with their probabilities, in pipeline order."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != pipeline.geometry.size:
        raise ShapeError(
            f"sample_view: expected a flat vector of length {pipeline.geometry.size}, "
            f"got shape {x.shape}"
        )
    out = x.copy()
    for spec, probability in pipeline.transforms:
        if rng.random() < probability:
            out = _apply(spec, out, pipeline.geometry, rng)
    if not np.all(np.isfinite(out)):
        raise ContractError("sample_view: transform produced non-finite values")
    return out


def make_pair(pipeline: AugmentationPipeline, x, rng, mode: str = "two_views"):
    """Two correlated views of one instance.

    "two_views" draws both views independently; "raw_second" pairs one
    drawn view with the untouched input; "raw_both" returns the input
    twice (the no-augmentation control).
    """
    if mode not in PAIR_MODES:
        raise ConfigError(f"make_pair: unknown mode {mode!r}, expected one of {PAIR_MODES}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "raw_both":
        return x.copy(), x.copy()
    view_a = sample_view(pipeline, x, rng)
    if mode == "raw_second":
        return view_a, x.copy()
    return view_a, sample_view(pipeline, x, rng)


def pair_rng(seed, epoch, sample_index) -> np.random.Generator:
    """Independent substream for one sample's augmentation pair; derived
    from (seed, epoch, index) so results do not depend on batch order."""
    return np.random.default_rng(
        np.random.SeedSequence((AUGMENT_STREAM_TAG, seed, epoch, sample_index))
    )


def default_vector_pipeline(geometry) -> AugmentationPipeline:
    """Perturbations sized for standardized (unit-variance) features."""
    return AugmentationPipeline(
        transforms=(
            (TransformSpec.gaussian_jitter(0.2), 1.0),
            (TransformSpec.scale_jitter(0.8, 1.2), 0.5),
            (TransformSpec.coordinate_mask(0.1), 0.3),
        ),
        geometry=geometry,
    )


def default_image_pipeline(geometry, include_blur=None) -> AugmentationPipeline:
    """Crop/flip/brightness stack; blur joins only for images with a side
    of at least BLUR_MIN_SIDE unless overridden."""
    if include_blur is None:
        include_blur = max(geometry.height, geometry.width) >= BLUR_MIN_SIDE
    transforms = [
        (TransformSpec.resized_crop(0.5), 1.0),
        (TransformSpec.horizontal_flip(), 0.5),
        (TransformSpec.brightness_jitter(0.6, 1.4), 0.8),
    ]
    if include_blur:
        transforms.append((TransformSpec.gaussian_blur(1.0), 0.5))
    return AugmentationPipeline(transforms=tuple(transforms), geometry=geometry)
