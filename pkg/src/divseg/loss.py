"""Dice score and loss restricted to a single class channel.

The score is the soft overlap ratio (2·Σ p·g + ε) / (Σ p + Σ g + ε) computed
only on the target class channel, where p is the predicted probability of the
target class per pixel and g the one-hot ground-truth indicator. With hard 0/1
predictions and ε = 0 this reduces to the set form 2|A∩B| / (|A| + |B|). Sums
run over the whole batch, so one global ratio is produced per call. The loss
is 1 − score, minimized at perfect overlap; all other channels are ignored
entirely, so training concentrates on the designated class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import LabelMask, ProbMap
from .errors import InvalidInputError


@dataclass(frozen=True)
class DiceConfig:
    """Target class index and the smoothing term added to both ratio sides."""

    target_class: int = 1
    smooth: float = 1.0

    def __post_init__(self) -> None:
        if self.target_class < 0:
            raise InvalidInputError(f"target_class must be >= 0, got {self.target_class}")
        if self.smooth < 0.0:
            raise InvalidInputError(f"smooth must be >= 0, got {self.smooth}")


def dice_score_tensor(
    probs: torch.Tensor,
    target: torch.Tensor,
    target_class: int = 1,
    smooth: float = 1.0,
) -> torch.Tensor:
    """Soft Dice score on one class channel, differentiable in ``probs``.

    ``probs`` is (B, K, H, W) or (K, H, W); ``target`` is the matching integer
    class map (B, H, W) or (H, W). Returns a scalar tensor.
    """
    if probs.dim() == 3:
        probs = probs.unsqueeze(0)
    if target.dim() == 2:
        target = target.unsqueeze(0)
    if probs.dim() != 4 or target.dim() != 3:
        raise InvalidInputError(
            f"expected (B,K,H,W) probs and (B,H,W) target, got {tuple(probs.shape)} "
            f"and {tuple(target.shape)}"
        )
    if probs.shape[0] != target.shape[0] or probs.shape[2:] != target.shape[1:]:
        raise InvalidInputError(
            f"prediction {tuple(probs.shape)} and target {tuple(target.shape)} "
            "disagree on batch or spatial dims"
        )
    if not 0 <= target_class < probs.shape[1]:
        raise InvalidInputError(
            f"target class {target_class} out of range for {probs.shape[1]} classes"
        )
    p = probs[:, target_class]
    g = (target == target_class).to(probs.dtype)
    intersection = (p * g).sum()
    return (2.0 * intersection + smooth) / (p.sum() + g.sum() + smooth)


def dice_loss_tensor(
    probs: torch.Tensor,
    target: torch.Tensor,
    target_class: int = 1,
    smooth: float = 1.0,
) -> torch.Tensor:
    """1 − score; the quantity minimized during training."""
    return 1.0 - dice_score_tensor(probs, target, target_class=target_class, smooth=smooth)


def _validate_pair(pred: ProbMap, gt: LabelMask, cfg: DiceConfig) -> None:
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InvalidInputError(
            f"prediction {pred.height}×{pred.width} and ground truth "
            f"{gt.height}×{gt.width} disagree on spatial dims"
        )
    if cfg.target_class >= pred.classes:
        raise InvalidInputError(
            f"target class {cfg.target_class} out of range for {pred.classes} classes"
        )


def single_channel_dice_score(
    pred: ProbMap, gt: LabelMask, cfg: DiceConfig = DiceConfig()
) -> float:
    """Soft Dice score of a prediction against a mask, in [0, 1]."""
    _validate_pair(pred, gt, cfg)
    p = pred.data[cfg.target_class]
    g = (gt.data == cfg.target_class).astype(np.float64)
    num = 2.0 * float((p * g).sum()) + cfg.smooth
    den = float(p.sum()) + float(g.sum()) + cfg.smooth
    if den == 0.0:
        # Both sets empty with no smoothing: define perfect agreement.
        return 1.0
    return num / den


def single_channel_dice_loss(
    pred: ProbMap, gt: LabelMask, cfg: DiceConfig = DiceConfig()
) -> float:
    """1 − single_channel_dice_score, in [0, 1]."""
    return 1.0 - single_channel_dice_score(pred, gt, cfg)
