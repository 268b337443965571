"""Segmentation network registry and compact reference architectures.

Every registered builder produces a :class:`SegmentationNetwork` whose forward
maps a float batch (B, in_channels, H, W) to logits (B, classes, H, W) with
the spatial dims preserved. Weight initialization is a deterministic function
of ``NetworkSpec.seed``; two builds from equal specs are bitwise identical.
Spatial dims must be divisible by 2**depth when forward is called.

The built-in entries are desk-scale takes on the classic encoder-decoder
families: plain skip connections ("unet"), dense nested skips ("unetpp"),
a feature pyramid with a fused multi-scale head ("fpn"), and atrous pyramid
pooling without and with a low-level decoder ("deeplabv3", "deeplabv3plus").
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import ImageTensor, LogitMap
from .errors import ConfigurationError, InvalidInputError, ShapeError


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture id plus the shape and initialization parameters."""

    arch_id: str
    in_channels: int = 3
    classes: int = 2
    depth: int = 4
    base_width: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.in_channels < 1:
            raise InvalidInputError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.classes < 2:
            raise InvalidInputError(f"classes must be >= 2, got {self.classes}")
        if self.depth < 1:
            raise InvalidInputError(f"depth must be >= 1, got {self.depth}")
        if self.base_width < 1:
            raise InvalidInputError(f"base_width must be >= 1, got {self.base_width}")


class SegmentationNetwork(nn.Module):
    """Base class fixing the batch-in, logits-out forward contract."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__()
        self.spec = spec

    @property
    def in_channels(self) -> int:
        return self.spec.in_channels

    @property
    def classes(self) -> int:
        return self.spec.classes

    def validate_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4:
            raise ShapeError(f"expected a (B, C, H, W) batch, got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"channel mismatch: network expects {self.in_channels}, got {x.shape[1]}"
            )
        factor = 2 ** self.spec.depth
        for name, dim in (("height", x.shape[2]), ("width", x.shape[3])):
            if dim % factor != 0:
                raise ShapeError(
                    f"{name} {dim} is not divisible by 2**depth = {factor}"
                )


Builder = Callable[[NetworkSpec], SegmentationNetwork]

_REGISTRY: dict[str, Builder] = {}


def register_arch(arch_id: str, builder: Builder) -> None:
    """Add a builder to the registry; duplicate ids are a configuration error."""
    if arch_id in _REGISTRY:
        raise ConfigurationError(f"architecture {arch_id!r} is already registered")
    _REGISTRY[arch_id] = builder


def registered_archs() -> list[str]:
    return sorted(_REGISTRY)


def build_network(spec: NetworkSpec) -> SegmentationNetwork:
    """Build a network with weights seeded deterministically by ``spec.seed``."""
    try:
        builder = _REGISTRY[spec.arch_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown architecture {spec.arch_id!r}; registered: {registered_archs()}"
        ) from None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(spec.seed)
        net = builder(spec)
    return net


def images_to_batch(images: Sequence[ImageTensor]) -> torch.Tensor:
    """Stack H×W×C images into a float32 (B, C, H, W) batch."""
    if not images:
        raise InvalidInputError("need at least one image")
    shapes = {img.data.shape for img in images}
    if len(shapes) != 1:
        raise ShapeError(f"images in a batch must share one shape, got {sorted(shapes)}")
    arr = np.stack([img.data.transpose(2, 0, 1) for img in images])
    return torch.from_numpy(arr).to(torch.float32)


def batch_to_logitmaps(batch: torch.Tensor) -> list[LogitMap]:
    """Split a (B, K, H, W) logits batch into per-sample maps."""
    if batch.dim() != 4:
        raise ShapeError(f"expected a (B, K, H, W) batch, got shape {tuple(batch.shape)}")
    arr = batch.detach().cpu().numpy().astype(np.float64)
    return [LogitMap(a) for a in arr]


def _widths(spec: NetworkSpec) -> list[int]:
    return [spec.base_width * (2 ** i) for i in range(spec.depth + 1)]


class _ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int) -> None:
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class _Encoder(nn.Module):
    """Shared pyramid encoder: one conv block per level, 2x pooling between."""

    def __init__(self, in_channels: int, widths: list[int]) -> None:
        super().__init__()
        blocks = [_ConvBlock(in_channels, widths[0])]
        for i in range(1, len(widths)):
            blocks.append(_ConvBlock(widths[i - 1], widths[i]))
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [self.blocks[0](x)]
        for block in self.blocks[1:]:
            feats.append(block(self.pool(feats[-1])))
        return feats


class MiniUNet(SegmentationNetwork):
    """Encoder-decoder with plain skip connections."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__(spec)
        w = _widths(spec)
        self.encoder = _Encoder(spec.in_channels, w)
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(w[i + 1], w[i], 2, stride=2) for i in reversed(range(spec.depth))]
        )
        self.decoders = nn.ModuleList(
            [_ConvBlock(2 * w[i], w[i]) for i in reversed(range(spec.depth))]
        )
        self.head = nn.Conv2d(w[0], spec.classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.validate_input(x)
        feats = self.encoder(x)
        y = feats[-1]
        for up, dec, skip in zip(self.ups, self.decoders, reversed(feats[:-1])):
            y = dec(torch.cat([up(y), skip], dim=1))
        return self.head(y)


class MiniUNetPP(SegmentationNetwork):
    """Nested encoder-decoder with dense skip pathways."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__(spec)
        w = _widths(spec)
        self.encoder = _Encoder(spec.in_channels, w)
        self.nodes = nn.ModuleDict()
        self.ups = nn.ModuleDict()
        for j in range(1, spec.depth + 1):
            for i in range(spec.depth + 1 - j):
                self.ups[f"u{i}_{j}"] = nn.ConvTranspose2d(w[i + 1], w[i], 2, stride=2)
                self.nodes[f"x{i}_{j}"] = _ConvBlock((j + 1) * w[i], w[i])
        self.head = nn.Conv2d(w[0], spec.classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.validate_input(x)
        feats = self.encoder(x)
        grid: dict[tuple[int, int], torch.Tensor] = {(i, 0): f for i, f in enumerate(feats)}
        for j in range(1, self.spec.depth + 1):
            for i in range(self.spec.depth + 1 - j):
                up = self.ups[f"u{i}_{j}"](grid[(i + 1, j - 1)])
                dense = [grid[(i, k)] for k in range(j)]
                grid[(i, j)] = self.nodes[f"x{i}_{j}"](torch.cat(dense + [up], dim=1))
        return self.head(grid[(0, self.spec.depth)])


class MiniFPN(SegmentationNetwork):
    """Feature pyramid with lateral connections and a fused multi-scale head."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__(spec)
        w = _widths(spec)
        p = spec.base_width * 2
        self.encoder = _Encoder(spec.in_channels, w)
        self.laterals = nn.ModuleList([nn.Conv2d(wi, p, 1) for wi in w])
        self.smooths = nn.ModuleList([nn.Conv2d(p, p, 3, padding=1) for _ in w])
        self.head = nn.Sequential(
            nn.Conv2d(p, p, 3, padding=1),
            nn.BatchNorm2d(p),
            nn.ReLU(inplace=True),
            nn.Conv2d(p, spec.classes, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.validate_input(x)
        feats = self.encoder(x)
        pyramid = [self.laterals[-1](feats[-1])]
        for lat, feat in zip(reversed(self.laterals[:-1]), reversed(feats[:-1])):
            upper = F.interpolate(pyramid[-1], scale_factor=2, mode="bilinear",
                                  align_corners=False)
            pyramid.append(lat(feat) + upper)
        pyramid = [s(lvl) for s, lvl in zip(reversed(self.smooths), pyramid)]
        size = x.shape[2:]
        fused = sum(
            F.interpolate(lvl, size=size, mode="bilinear", align_corners=False)
            if lvl.shape[2:] != size else lvl
            for lvl in pyramid
        )
        return self.head(fused)


class _ASPP(nn.Module):
    """Atrous spatial pyramid pooling with a global-context branch."""

    def __init__(self, in_ch: int, out_ch: int, rates: tuple[int, ...] = (2, 4)) -> None:
        super().__init__()
        branches = [nn.Sequential(nn.Conv2d(in_ch, out_ch, 1), nn.BatchNorm2d(out_ch),
                                  nn.ReLU(inplace=True))]
        for r in rates:
            branches.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, out_ch, 3, padding=r, dilation=r),
                    nn.BatchNorm2d(out_ch),
                    nn.ReLU(inplace=True),
                )
            )
        self.branches = nn.ModuleList(branches)
        self.global_pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_ch, out_ch, 1),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Sequential(
            nn.Conv2d(out_ch * (len(branches) + 1), out_ch, 1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        outs = [b(x) for b in self.branches]
        pooled = self.global_pool(x)
        outs.append(pooled.expand(-1, -1, x.shape[2], x.shape[3]))
        return self.project(torch.cat(outs, dim=1))


class MiniDeepLabV3(SegmentationNetwork):
    """Encoder plus atrous pyramid pooling, upsampled straight to full size."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__(spec)
        w = _widths(spec)
        self.encoder = _Encoder(spec.in_channels, w)
        self.aspp = _ASPP(w[-1], spec.base_width * 4)
        self.head = nn.Conv2d(spec.base_width * 4, spec.classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.validate_input(x)
        feats = self.encoder(x)
        y = self.head(self.aspp(feats[-1]))
        return F.interpolate(y, size=x.shape[2:], mode="bilinear", align_corners=False)


class MiniDeepLabV3Plus(SegmentationNetwork):
    """Atrous pyramid pooling refined with a low-level-feature decoder."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__(spec)
        w = _widths(spec)
        low_index = min(1, spec.depth)
        self.low_index = low_index
        self.encoder = _Encoder(spec.in_channels, w)
        self.aspp = _ASPP(w[-1], spec.base_width * 4)
        self.low_project = nn.Sequential(
            nn.Conv2d(w[low_index], spec.base_width, 1),
            nn.BatchNorm2d(spec.base_width),
            nn.ReLU(inplace=True),
        )
        self.refine = _ConvBlock(spec.base_width * 4 + spec.base_width, spec.base_width * 2)
        self.head = nn.Conv2d(spec.base_width * 2, spec.classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.validate_input(x)
        feats = self.encoder(x)
        low = self.low_project(feats[self.low_index])
        y = self.aspp(feats[-1])
        if y.shape[2:] != low.shape[2:]:
            y = F.interpolate(y, size=low.shape[2:], mode="bilinear", align_corners=False)
        y = self.head(self.refine(torch.cat([y, low], dim=1)))
        return F.interpolate(y, size=x.shape[2:], mode="bilinear", align_corners=False)


register_arch("unet", MiniUNet)
register_arch("unetpp", MiniUNetPP)
register_arch("fpn", MiniFPN)
register_arch("deeplabv3", MiniDeepLabV3)
register_arch("deeplabv3plus", MiniDeepLabV3Plus)
