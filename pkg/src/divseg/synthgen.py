"""Deterministic synthetic dataset generator.

Each image is a smooth color gradient with additive noise; positive images
carry one or more bright, slightly color-shifted elliptical blobs with a
wobbled boundary. The mask is written from the exact blob support geometry,
never by thresholding the rendered image, so mask foreground and blob support
agree pixel for pixel. Everything derives from the config seed: the same
config produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ImageTensor, LabelMask, save_image, save_mask
from .errors import InvalidInputError, MaskIOError
from .pipeline import MANIFEST_FILE, DatasetManifest, ManifestEntry

# Additive color shift of blob interiors relative to the background.
_BLOB_TINT = np.array([0.32, 0.16, 0.22])


@dataclass(frozen=True)
class SynthConfig:
    """Dataset size, blob geometry ranges, and the difficulty knobs."""

    count: int = 100
    image_size: int = 64
    seed: int = 0
    max_blobs: int = 3
    radius_min: float = 0.08  # fraction of image size
    radius_max: float = 0.22
    negative_fraction: float = 0.2
    noise_amplitude: float = 0.05

    def __post_init__(self) -> None:
        if self.count < 1:
            raise InvalidInputError(f"count must be >= 1, got {self.count}")
        if self.image_size < 8:
            raise InvalidInputError(f"image_size must be >= 8, got {self.image_size}")
        if self.seed < 0:
            raise InvalidInputError(f"seed must be >= 0, got {self.seed}")
        if self.max_blobs < 1:
            raise InvalidInputError(f"max_blobs must be >= 1, got {self.max_blobs}")
        if not 0.0 < self.radius_min <= self.radius_max < 0.5:
            raise InvalidInputError(
                f"radius fractions must satisfy 0 < min <= max < 0.5, "
                f"got ({self.radius_min}, {self.radius_max})"
            )
        if not 0.0 <= self.negative_fraction <= 1.0:
            raise InvalidInputError(
                f"negative_fraction must lie in [0, 1], got {self.negative_fraction}"
            )
        if self.noise_amplitude < 0.0:
            raise InvalidInputError(
                f"noise_amplitude must be >= 0, got {self.noise_amplitude}"
            )


def _blob_support(size: int, rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Boolean support of one wobbled ellipse; guaranteed non-empty."""
    cy = rng.uniform(0.18, 0.82) * size
    cx = rng.uniform(0.18, 0.82) * size
    ry = rng.uniform(cfg.radius_min, cfg.radius_max) * size
    rx = rng.uniform(cfg.radius_min, cfg.radius_max) * size
    tilt = rng.uniform(0.0, np.pi)
    # Low-order harmonic wobble keeps the boundary irregular but star-shaped.
    amps = rng.uniform(0.0, 0.12, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)

    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    cos_t, sin_t = np.cos(tilt), np.sin(tilt)
    u = (dx * cos_t + dy * sin_t) / rx
    v = (-dx * sin_t + dy * cos_t) / ry
    radius = np.hypot(u, v)
    theta = np.arctan2(v, u)
    wobble = 1.0 + sum(
        a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amps, phases))
    )
    support = radius <= wobble
    if not support.any():
        support[int(round(cy)) % size, int(round(cx)) % size] = True
    return support


def _render(index: int, positive: bool, cfg: SynthConfig) -> tuple[ImageTensor, LabelMask]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, index]))
    size = cfg.image_size
    yy, xx = np.mgrid[0:size, 0:size]

    base = rng.uniform(0.25, 0.5, size=3)
    direction = rng.normal(size=2)
    direction /= np.hypot(*direction)
    ramp = (direction[0] * (yy / size - 0.5) + direction[1] * (xx / size - 0.5))
    grad_amp = rng.uniform(0.05, 0.18, size=3)
    img = base[None, None, :] + ramp[:, :, None] * grad_amp[None, None, :]

    support = np.zeros((size, size), dtype=bool)
    if positive:
        n_blobs = int(rng.integers(1, cfg.max_blobs + 1))
        profile = np.zeros((size, size))
        for _ in range(n_blobs):
            blob = _blob_support(size, rng, cfg)
            support |= blob
            profile = np.maximum(profile, blob.astype(float))
        tint = _BLOB_TINT * rng.uniform(0.8, 1.1)
        img = img + profile[:, :, None] * tint[None, None, :]

    img = img + rng.normal(0.0, cfg.noise_amplitude, size=img.shape)
    image = ImageTensor(np.clip(img, 0.0, 1.0))
    mask = LabelMask(support.astype(np.int64), classes=2)
    return image, mask


def generate(
    cfg: SynthConfig,
    out_dir: Path | str,
    splits: dict[str, int] | None = None,
) -> DatasetManifest:
    """Write images, masks, and a manifest; return the manifest.

    Exactly ``round(count * negative_fraction)`` images are negative, chosen
    by a seeded permutation. Negatives still get an all-background mask file
    on disk so directory pairing stays total, but their manifest entries have
    no mask path, which is the pipeline's negative-sample convention. Entries
    land in the train split unless ``splits`` maps split names to counts
    summing to ``count``.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    masks_dir = out_dir / "masks"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
        masks_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MaskIOError(f"could not create output directory {out_dir}: {exc}") from exc

    if splits is not None and sum(splits.values()) != cfg.count:
        raise InvalidInputError(
            f"split counts {splits} must sum to count = {cfg.count}"
        )

    assign_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    n_negative = round(cfg.count * cfg.negative_fraction)
    negative = np.zeros(cfg.count, dtype=bool)
    negative[assign_rng.permutation(cfg.count)[:n_negative]] = True

    split_of = ["train"] * cfg.count
    if splits is not None:
        order = assign_rng.permutation(cfg.count)
        cursor = 0
        for split, count in splits.items():
            for idx in order[cursor:cursor + count]:
                split_of[idx] = split
            cursor += count

    width = max(4, len(str(cfg.count - 1)))
    entries = []
    for i in range(cfg.count):
        image, mask = _render(i, positive=not negative[i], cfg=cfg)
        name = f"img_{i:0{width}d}.png"
        image_path = images_dir / name
        mask_path = masks_dir / name
        save_image(image, image_path)
        save_mask(mask, mask_path)
        entries.append(
            ManifestEntry(
                split=split_of[i],
                image=image_path,
                mask=None if negative[i] else mask_path,
            )
        )

    manifest = DatasetManifest(tuple(entries))
    manifest.save(out_dir / MANIFEST_FILE)
    return manifest
