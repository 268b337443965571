"""Paired image/mask augmentation with per-sample seeded randomness.

Geometric ops apply the identical transform to the image and its mask, with
nearest-neighbor resampling for the mask so class indices survive. Photometric
ops touch only the image and clip back into [0, 1]. Ops run in spec order and
each consumes random draws from the generator it is handed, so equal seeds
reproduce equal outputs byte for byte.

A handful of further op names are recognized but not built in; they raise a
clear not-available error unless an implementation is registered with
:func:`register_augmentation`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .core import ImageTensor, LabelMask
from .errors import ConfigurationError

AugmentFn = Callable[[np.ndarray, np.ndarray, dict, np.random.Generator],
                     tuple[np.ndarray, np.ndarray]]

DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "horizontal_flip": {},
    "shift_scale_rotate": {"shift_limit": 0.0625, "scale_limit": 0.1, "rotate_limit": 15.0},
    "brightness_contrast": {"brightness_limit": 0.2, "contrast_limit": 0.2},
    "gaussian_noise": {"std_min": 0.01, "std_max": 0.05},
    "blur": {"sigma_min": 0.5, "sigma_max": 1.5},
}

# Recognized but left to plugins; applying one unimplemented is an error.
OPTIONAL_OPS = (
    "perspective_shift",
    "clahe",
    "random_gamma",
    "random_sharpen",
    "motion_blur",
    "hue_saturation",
)

_PLUGINS: dict[str, AugmentFn] = {}


class AugmentationNotAvailableError(ConfigurationError):
    """The op name is recognized but no implementation is registered."""


def register_augmentation(name: str, fn: AugmentFn) -> None:
    """Provide an implementation for one of the optional op names."""
    if name not in OPTIONAL_OPS:
        raise ConfigurationError(
            f"only optional ops can be registered, got {name!r}; optional: {OPTIONAL_OPS}"
        )
    _PLUGINS[name] = fn


def _hflip(img, mask, params, rng):
    return img[:, ::-1], mask[:, ::-1]


def _shift_scale_rotate(img, mask, params, rng):
    h, w = mask.shape
    shift = params["shift_limit"]
    dy = rng.uniform(-shift, shift) * h
    dx = rng.uniform(-shift, shift) * w
    scale = 1.0 + rng.uniform(-params["scale_limit"], params["scale_limit"])
    angle = math.radians(rng.uniform(-params["rotate_limit"], params["rotate_limit"]))

    # Output pixel -> input pixel: undo translation, then rotation and scale
    # about the image center.
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    inv = np.array([[cos_a, -sin_a], [sin_a, cos_a]]) / scale
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - inv @ (center + np.array([dy, dx]))

    out_img = np.empty_like(img)
    for c in range(img.shape[2]):
        out_img[:, :, c] = ndimage.affine_transform(
            img[:, :, c], inv, offset=offset, order=1, mode="nearest"
        )
    out_mask = ndimage.affine_transform(
        mask, inv, offset=offset, order=0, mode="constant", cval=0
    )
    return np.clip(out_img, 0.0, 1.0), out_mask


def _brightness_contrast(img, mask, params, rng):
    b = rng.uniform(-params["brightness_limit"], params["brightness_limit"])
    c = rng.uniform(-params["contrast_limit"], params["contrast_limit"])
    out = (img - 0.5) * (1.0 + c) + 0.5 + b
    return np.clip(out, 0.0, 1.0), mask


def _gaussian_noise(img, mask, params, rng):
    std = rng.uniform(params["std_min"], params["std_max"])
    out = img + rng.normal(0.0, std, size=img.shape)
    return np.clip(out, 0.0, 1.0), mask


def _blur(img, mask, params, rng):
    sigma = rng.uniform(params["sigma_min"], params["sigma_max"])
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.gaussian_filter(img[:, :, c], sigma)
    return np.clip(out, 0.0, 1.0), mask


CORE_OPS: dict[str, AugmentFn] = {
    "horizontal_flip": _hflip,
    "shift_scale_rotate": _shift_scale_rotate,
    "brightness_contrast": _brightness_contrast,
    "gaussian_noise": _gaussian_noise,
    "blur": _blur,
}


@dataclass(frozen=True)
class AugmentationOp:
    """One op in the sequence: name, trigger probability, and parameters."""

    name: str
    probability: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in CORE_OPS and self.name not in OPTIONAL_OPS:
            raise ConfigurationError(
                f"unknown augmentation op {self.name!r}; known: "
                f"{sorted(CORE_OPS) + sorted(OPTIONAL_OPS)}"
            )
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError(
                f"probability must lie in [0, 1], got {self.probability} for {self.name!r}"
            )
        merged = dict(DEFAULT_PARAMS.get(self.name, {}))
        merged.update(self.params)
        object.__setattr__(self, "params", merged)


@dataclass(frozen=True)
class AugmentationSpec:
    """Ordered op sequence applied to each training sample."""

    ops: tuple[AugmentationOp, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Generator keyed by (global seed, epoch, sample index) for reproducibility."""
    return np.random.default_rng(np.random.SeedSequence([seed, 1, epoch, index]))


def augment(
    image: ImageTensor,
    mask: LabelMask,
    spec: AugmentationSpec,
    rng: np.random.Generator,
) -> tuple[ImageTensor, LabelMask]:
    """Apply the op sequence to one image/mask pair."""
    if (image.height, image.width) != (mask.height, mask.width):
        raise ConfigurationError(
            f"image {image.height}×{image.width} and mask {mask.height}×{mask.width} "
            "disagree on spatial dims"
        )
    img = np.array(image.data)
    m = np.array(mask.data)
    for op in spec.ops:
        fn = CORE_OPS.get(op.name) or _PLUGINS.get(op.name)
        if fn is None:
            raise AugmentationNotAvailableError(
                f"augmentation {op.name!r} is recognized but not implemented; "
                "register an implementation with register_augmentation()"
            )
        if rng.random() < op.probability:
            img, m = fn(img, m, op.params, rng)
    return ImageTensor(img), LabelMask(m, classes=mask.classes)
