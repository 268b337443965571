"""Triangular composite network: two parallel branches feeding a head network.

One input image runs through two independently initialized branch networks;
their raw logits are concatenated along the class/channel axis (no activation
in between, so gradient magnitude is preserved across stages) and passed to a
third network that emits the final logits. The composite trains as a single
model: one loss, backpropagated through all three subnets in one step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .backbones import (
    NetworkSpec,
    SegmentationNetwork,
    build_network,
    register_arch,
)
from .errors import ConfigurationError, TrainingError
from .loss import DiceConfig, dice_loss_tensor


@dataclass(frozen=True)
class TriUNetSpec:
    """Specs of the two parallel branches and the head network."""

    net_a: NetworkSpec
    net_b: NetworkSpec
    net_c: NetworkSpec


def triunet_spec(
    arch_id: str = "unet",
    in_channels: int = 3,
    classes: int = 2,
    depth: int = 4,
    base_width: int = 16,
    seed: int = 0,
) -> TriUNetSpec:
    """Spec with consistent channel arithmetic from one user seed.

    Subnet seeds default to (seed, seed+1, seed+2) so the branches start from
    different randomized weights.
    """
    common = dict(arch_id=arch_id, classes=classes, depth=depth, base_width=base_width)
    return TriUNetSpec(
        net_a=NetworkSpec(in_channels=in_channels, seed=seed, **common),
        net_b=NetworkSpec(in_channels=in_channels, seed=seed + 1, **common),
        net_c=NetworkSpec(in_channels=2 * classes, seed=seed + 2, **common),
    )


def _validate_spec(spec: TriUNetSpec) -> None:
    if spec.net_a.in_channels != spec.net_b.in_channels:
        raise ConfigurationError(
            f"parallel branches must share input channels: "
            f"net_a has {spec.net_a.in_channels}, net_b has {spec.net_b.in_channels}"
        )
    expected = spec.net_a.classes + spec.net_b.classes
    if spec.net_c.in_channels != expected:
        raise ConfigurationError(
            f"head input channels must equal net_a.classes + net_b.classes = "
            f"{expected}, got {spec.net_c.in_channels}"
        )


class TriUNet(SegmentationNetwork):
    """Composite network satisfying the single-network forward contract.

    Its parameter set is the disjoint union of the three subnets' parameters
    (state-dict groups ``net_a.``, ``net_b.``, ``net_c.``). The two branch
    forwards are independent and could run concurrently; they are evaluated
    sequentially here, which fixes the reference result.
    """

    def __init__(self, spec: TriUNetSpec, net_a: SegmentationNetwork,
                 net_b: SegmentationNetwork, net_c: SegmentationNetwork) -> None:
        composite = NetworkSpec(
            arch_id="triunet",
            in_channels=spec.net_a.in_channels,
            classes=spec.net_c.classes,
            depth=spec.net_a.depth,
            base_width=spec.net_a.base_width,
            seed=spec.net_a.seed,
        )
        super().__init__(composite)
        self.triunet_spec = spec
        self.net_a = net_a
        self.net_b = net_b
        self.net_c = net_c

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.validate_input(x)
        v1 = self.net_a(x)
        v2 = self.net_b(x)
        return self.net_c(torch.cat([v1, v2], dim=1))


def build_triunet(spec: TriUNetSpec) -> TriUNet:
    """Validate the channel arithmetic, then build all three subnets."""
    _validate_spec(spec)
    return TriUNet(
        spec,
        net_a=build_network(spec.net_a),
        net_b=build_network(spec.net_b),
        net_c=build_network(spec.net_c),
    )


def end_to_end_step(
    net: SegmentationNetwork,
    images: torch.Tensor,
    targets: torch.Tensor,
    cfg: DiceConfig,
    optimizer: torch.optim.Optimizer,
) -> float:
    """One optimization step on a batch; returns the pre-step loss value.

    The loss is computed from a single forward through the whole network and
    backpropagated through every parameter before the optimizer step, so all
    subnets of a composite update together.
    """
    net.train()
    optimizer.zero_grad(set_to_none=True)
    logits = net(images)
    probs = torch.softmax(logits, dim=1)
    loss = dice_loss_tensor(probs, targets, target_class=cfg.target_class, smooth=cfg.smooth)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()!r}; aborting training step")
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def _build_triunet_from_networkspec(spec: NetworkSpec) -> TriUNet:
    return build_triunet(
        triunet_spec(
            arch_id="unet",
            in_channels=spec.in_channels,
            classes=spec.classes,
            depth=spec.depth,
            base_width=spec.base_width,
            seed=spec.seed,
        )
    )


register_arch("triunet", _build_triunet_from_networkspec)
