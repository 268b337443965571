"""Ensemble prediction: run frozen member models and fuse their outputs.

Two fusion modes are provided. Soft mean averages the members' per-pixel
class probabilities and then makes one decision from the averaged map; it is
the default because it strictly generalizes vote counting. Hard vote lets
each member commit to a binary mask first and averages the 0/1 votes. In
both modes an exact 0.5 rounds up to foreground, so hard vote with an odd
member count is per-pixel majority vote. Fusion is a symmetric function of
the members: reordering them never changes the result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbones import SegmentationNetwork, images_to_batch
from .checkpoints import load_checkpoint
from .core import (
    ImageTensor,
    LabelMask,
    ProbMap,
    resize_image,
    resize_mask_nearest,
    resize_probmap,
)
from .errors import CheckpointError, ConfigurationError, InvalidInputError

SOFT_MEAN = "soft-mean"
HARD_VOTE = "hard-vote"
FUSION_MODES = (SOFT_MEAN, HARD_VOTE)

# The only supported midpoint rule: an exact 0.5 rounds up to foreground.
HALF_UP = "half-up"

DEFAULT_WORKING_SIZE = 256


@dataclass(frozen=True)
class EnsembleSpec:
    """Ordered member checkpoints plus the fusion settings."""

    members: tuple[Path, ...]
    fusion_mode: str = SOFT_MEAN
    threshold: float = 0.5
    rounding: str = HALF_UP

    def __post_init__(self) -> None:
        members = tuple(Path(m) for m in self.members)
        if not members:
            raise InvalidInputError("ensemble needs at least one member")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(
                f"unknown fusion mode {self.fusion_mode!r}; expected one of {FUSION_MODES}"
            )
        if not 0.0 < self.threshold < 1.0:
            raise InvalidInputError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.rounding != HALF_UP:
            raise ConfigurationError(
                f"unsupported rounding rule {self.rounding!r}; only {HALF_UP!r} is defined"
            )
        object.__setattr__(self, "members", members)

    def save(self, path: Path | str) -> None:
        payload = {
            "members": [str(m) for m in self.members],
            "fusion_mode": self.fusion_mode,
            "threshold": self.threshold,
            "rounding": self.rounding,
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "EnsembleSpec":
        try:
            payload = json.loads(Path(path).read_text())
            return cls(
                members=tuple(Path(m) for m in payload["members"]),
                fusion_mode=payload.get("fusion_mode", SOFT_MEAN),
                threshold=float(payload.get("threshold", 0.5)),
                rounding=payload.get("rounding", HALF_UP),
            )
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigurationError(f"could not load ensemble manifest {path}: {exc}") from exc


def _check_same_shape(maps: list, kind: str) -> None:
    if not maps:
        raise InvalidInputError(f"need at least one {kind}")
    shapes = {m.data.shape for m in maps}
    if len(shapes) != 1:
        raise InvalidInputError(f"all {kind}s must share one shape, got {sorted(shapes)}")


def average_probmaps(prob_maps: list[ProbMap]) -> ProbMap:
    """Per-pixel, per-class arithmetic mean of the members' probabilities."""
    _check_same_shape(prob_maps, "probability map")
    stacked = np.stack([m.data for m in prob_maps])
    return ProbMap(stacked.mean(axis=0))


def decide_mask(probs: ProbMap, threshold: float = 0.5) -> LabelMask:
    """Turn a probability map into a hard mask.

    Binary maps take foreground wherever its probability reaches the
    threshold (an exact hit rounds up); with more classes the argmax wins and
    ties break to the lowest index.
    """
    if probs.classes == 2:
        return LabelMask((probs.data[1] >= threshold).astype(np.int64), classes=2)
    return LabelMask(np.argmax(probs.data, axis=0), classes=probs.classes)


def fuse_soft(prob_maps: list[ProbMap], threshold: float = 0.5) -> LabelMask:
    """Average member probabilities, then decide once."""
    return decide_mask(average_probmaps(prob_maps), threshold=threshold)


def fuse_hard(masks: list[LabelMask]) -> LabelMask:
    """Average binary member masks and round half up.

    For an odd member count this is exactly per-pixel majority vote.
    """
    _check_same_shape(masks, "mask")
    for i, m in enumerate(masks):
        if m.classes != 2 or (m.data.size and m.data.max() > 1):
            raise InvalidInputError(f"hard-vote fusion needs binary masks; member {i} is not")
    votes = np.stack([m.data for m in masks]).sum(axis=0)
    # mean >= 0.5  <=>  2 * votes >= member count, in exact integer arithmetic
    return LabelMask((2 * votes >= len(masks)).astype(np.int64), classes=2)


class EnsemblePredictor:
    """Loads member checkpoints once and fuses their predictions per image."""

    def __init__(self, spec: EnsembleSpec, working_size: int = DEFAULT_WORKING_SIZE) -> None:
        if working_size < 1:
            raise InvalidInputError(f"working size must be >= 1, got {working_size}")
        self.spec = spec
        self.working_size = working_size
        self.members: list[SegmentationNetwork] = []
        for path in spec.members:
            try:
                net, _ = load_checkpoint(path)
            except CheckpointError as exc:
                raise CheckpointError(f"could not load ensemble member {path}: {exc}") from exc
            net.eval()
            self.members.append(net)
        classes = {net.classes for net in self.members}
        if len(classes) != 1:
            raise ConfigurationError(f"members disagree on class count: {sorted(classes)}")
        in_channels = {net.in_channels for net in self.members}
        if len(in_channels) != 1:
            raise ConfigurationError(
                f"members disagree on input channels: {sorted(in_channels)}"
            )

    def member_probmaps(self, image: ImageTensor) -> list[ProbMap]:
        """Each member's per-pixel class distribution at the working size."""
        resized = resize_image(image, self.working_size, self.working_size)
        batch = images_to_batch([resized])
        maps = []
        with torch.no_grad():
            for net in self.members:
                logits = net(batch)[0]
                probs = torch.softmax(logits.to(torch.float64), dim=0)
                maps.append(ProbMap(probs.numpy()))
        return maps

    def predict(self, image: ImageTensor) -> LabelMask:
        """Fused mask at the image's original resolution."""
        maps = self.member_probmaps(image)
        if self.spec.fusion_mode == SOFT_MEAN:
            mean = average_probmaps(maps)
            restored = resize_probmap(mean, image.height, image.width)
            return decide_mask(restored, threshold=self.spec.threshold)
        masks = [decide_mask(m, threshold=self.spec.threshold) for m in maps]
        fused = fuse_hard(masks)
        return resize_mask_nearest(fused, image.height, image.width)


def divergentnets_predict(
    image: ImageTensor,
    spec: EnsembleSpec,
    working_size: int = DEFAULT_WORKING_SIZE,
) -> LabelMask:
    """One-shot ensemble prediction for a single image."""
    return EnsemblePredictor(spec, working_size=working_size).predict(image)
