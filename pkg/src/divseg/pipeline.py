"""Dataset manifests, run configuration, the training loop, and prediction.

Training follows a fixed recipe per epoch: seeded shuffle of the train split,
augmentation, resize to the working size, forward pass, single-class Dice
loss, Adam step at the scheduled learning rate, then a validation pass that
scores the target-class IoU. Every epoch yields a checkpoint record; the
record maximizing the selection metric (earliest epoch on ties) is the run's
best. Validation and test samples never pass through augmentation: the
validation pass below has no augmentation path at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .augment import AugmentationOp, AugmentationSpec, augment, sample_rng
from .backbones import SegmentationNetwork, images_to_batch
from .checkpoints import CheckpointRecord, load_checkpoint, save_checkpoint
from .core import (
    ImageTensor,
    LabelMask,
    ProbMap,
    load_image,
    load_mask,
    resize_image,
    resize_mask_nearest,
    resize_probmap,
)
from .ensemble import decide_mask
from .errors import ConfigurationError, InvalidInputError, TrainingError
from .loss import DiceConfig
from .metrics import ConfusionCounts, confusion, per_class_metrics
from .triunet import end_to_end_step

SPLITS = ("train", "validation", "test")

MANIFEST_FILE = "manifest.tsv"
RECORDS_FILE = "records.json"
BEST_MARKER_FILE = "best.json"


# ---------------------------------------------------------------------------
# Manifests


@dataclass(frozen=True)
class ManifestEntry:
    """One sample: image path, optional mask path (none = negative), split."""

    split: str
    image: Path
    mask: Path | None = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        if not entries:
            raise InvalidInputError("manifest has no entries")
        seen: set[Path] = set()
        for e in entries:
            if e.split not in SPLITS:
                raise InvalidInputError(f"unknown split {e.split!r}; expected one of {SPLITS}")
            if e.image in seen:
                raise InvalidInputError(f"duplicate image path in manifest: {e.image}")
            seen.add(e.image)
        object.__setattr__(self, "entries", entries)

    def for_split(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise InvalidInputError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [e for e in self.entries if e.split == split]

    def counts(self) -> dict[str, dict[str, int]]:
        """Per split: total entries plus positive/negative sample counts."""
        out = {}
        for split in SPLITS:
            entries = self.for_split(split)
            positives = sum(1 for e in entries if e.mask is not None)
            out[split] = {
                "total": len(entries),
                "positive": positives,
                "negative": len(entries) - positives,
            }
        return out

    def save(self, path: Path | str) -> None:
        """One line per entry: split, image path, mask path or "-"."""
        path = Path(path)
        base = path.resolve().parent
        lines = []
        for e in self.entries:
            lines.append(
                "\t".join([e.split, _relativize(e.image, base),
                           _relativize(e.mask, base) if e.mask else "-"])
            )
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: Path | str, check_paths: bool = True) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise InvalidInputError(f"manifest file not found: {path}")
        base = path.resolve().parent
        entries = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise InvalidInputError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            split, image, mask = parts
            image_path = _resolve(image, base)
            mask_path = None if mask == "-" else _resolve(mask, base)
            if check_paths:
                if not image_path.is_file():
                    raise InvalidInputError(f"{path}:{lineno}: image not found: {image_path}")
                if mask_path is not None and not mask_path.is_file():
                    raise InvalidInputError(
                        f"{path}:{lineno}: mask missing for positive entry: {mask_path}"
                    )
            entries.append(ManifestEntry(split=split, image=image_path, mask=mask_path))
        return cls(tuple(entries))


def _relativize(p: Path, base: Path) -> str:
    try:
        return str(p.resolve().relative_to(base))
    except ValueError:
        return str(p)


def _resolve(raw: str, base: Path) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else base / p


# Ordered: when several mask files share a stem, the first suffix here wins.
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


def build_manifest(
    root: Path | str,
    rules: str | dict[str, int] | dict[str, float],
    seed: int = 0,
) -> DatasetManifest:
    """Scan ``root/images`` (masks in ``root/masks``) and assign splits.

    ``rules`` is either a single split name (everything goes there) or a
    mapping from split names to absolute counts (must sum to the number of
    images) or fractions (must sum to 1). Assignment is deterministic: stems
    are sorted, then permuted with the given seed, then cut into contiguous
    chunks in rule order. Images without a mask file become negative entries.
    """
    root = Path(root)
    images_dir = root / "images"
    masks_dir = root / "masks"
    if not images_dir.is_dir():
        raise InvalidInputError(f"image directory not found: {images_dir}")
    images = sorted(
        p for p in images_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        raise InvalidInputError(f"no image files found in {images_dir}")

    if isinstance(rules, str):
        rules = {rules: len(images)}
    for split in rules:
        if split not in SPLITS:
            raise ConfigurationError(f"unknown split {split!r} in rules; expected {SPLITS}")
    values = list(rules.values())
    if all(isinstance(v, int) for v in values):
        counts = {s: int(v) for s, v in rules.items()}
        if sum(counts.values()) != len(images):
            raise ConfigurationError(
                f"split counts {counts} must sum to the {len(images)} images found"
            )
    else:
        if abs(sum(values) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must sum to 1, got {values}")
        # Cumulative rounding so the counts always cover every image exactly.
        counts, acc, assigned = {}, 0.0, 0
        for split, frac in rules.items():
            acc += float(frac)
            boundary = round(acc * len(images))
            counts[split] = boundary - assigned
            assigned = boundary

    order = np.random.default_rng(np.random.SeedSequence([seed, 5])).permutation(len(images))
    if len(rules) == 1:
        order = np.arange(len(images))

    entries = []
    cursor = 0
    for split, count in counts.items():
        for idx in order[cursor:cursor + count]:
            image = images[idx]
            mask = None
            for suffix in IMAGE_SUFFIXES:
                candidate = masks_dir / (image.stem + suffix)
                if candidate.is_file():
                    mask = candidate
                    break
            entries.append(ManifestEntry(split=split, image=image, mask=mask))
        cursor += count
    return DatasetManifest(tuple(entries))


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class TrainConfig:
    """Epoch count, batch/working sizes, the two-step LR schedule, and seeds."""

    epochs: int = 200
    batch_size: int | None = None  # resolved from working size when unset
    working_size: int = 256
    initial_lr: float = 1e-4
    reduced_lr: float = 1e-5
    lr_switch_epoch: int = 50
    seed: int = 0
    target_class: int = 1
    selection_metric: str = "polyp_iou"
    dice_smooth: float = 1.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.lr_switch_epoch <= self.epochs:
            raise ConfigurationError(
                f"lr_switch_epoch must lie in [0, epochs={self.epochs}], "
                f"got {self.lr_switch_epoch}"
            )
        if self.initial_lr <= 0 or self.reduced_lr <= 0:
            raise ConfigurationError("learning rates must be > 0")
        if self.working_size < 1:
            raise ConfigurationError(f"working_size must be >= 1, got {self.working_size}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")
        if self.target_class < 0:
            raise ConfigurationError(f"target_class must be >= 0, got {self.target_class}")
        if self.dice_smooth < 0:
            raise ConfigurationError(f"dice_smooth must be >= 0, got {self.dice_smooth}")

    @property
    def resolved_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 8 if self.working_size >= 128 else 16


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: the initial rate through the switch epoch, then reduced."""
    if not 1 <= epoch <= cfg.epochs:
        raise InvalidInputError(f"epoch must lie in [1, {cfg.epochs}], got {epoch}")
    return cfg.initial_lr if epoch <= cfg.lr_switch_epoch else cfg.reduced_lr


def load_key_value_config(path: Path | str) -> dict[str, str]:
    """Parse a flat ``key = value`` text file; '#' starts a comment line."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


_TRAIN_KEY_TYPES = {
    "epochs": int,
    "batch_size": int,
    "working_size": int,
    "initial_lr": float,
    "reduced_lr": float,
    "lr_switch_epoch": int,
    "seed": int,
    "target_class": int,
    "selection_metric": str,
    "dice_smooth": float,
}


def train_settings_from_mapping(
    mapping: dict[str, str],
    overrides: dict | None = None,
) -> tuple[TrainConfig, AugmentationSpec]:
    """Build TrainConfig and AugmentationSpec from flat config keys.

    ``augmentations`` lists ops as ``name:probability`` comma-separated;
    per-op parameters use ``aug.<op>.<param> = value``. Explicit overrides
    win over config-file values.
    """
    kwargs = {}
    aug_names: list[tuple[str, float]] = []
    aug_params: dict[str, dict[str, float]] = {}
    for key, raw in mapping.items():
        if key == "augmentations":
            if raw:
                for item in raw.split(","):
                    name, _, prob = item.strip().partition(":")
                    try:
                        aug_names.append((name, float(prob) if prob else 0.5))
                    except ValueError:
                        raise ConfigurationError(
                            f"bad augmentation entry {item!r}; expected name:probability"
                        ) from None
        elif key.startswith("aug."):
            parts = key.split(".")
            if len(parts) != 3:
                raise ConfigurationError(f"bad augmentation key {key!r}; use aug.<op>.<param>")
            try:
                aug_params.setdefault(parts[1], {})[parts[2]] = float(raw)
            except ValueError:
                raise ConfigurationError(f"bad numeric value {raw!r} for {key!r}") from None
        elif key in _TRAIN_KEY_TYPES:
            try:
                kwargs[key] = _TRAIN_KEY_TYPES[key](raw)
            except ValueError:
                raise ConfigurationError(f"bad value {raw!r} for config key {key!r}") from None
        else:
            raise ConfigurationError(
                f"unknown config key {key!r}; known: {sorted(_TRAIN_KEY_TYPES) + ['augmentations', 'aug.<op>.<param>']}"
            )
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig(**kwargs)
    ops = tuple(
        AugmentationOp(name=n, probability=p, params=aug_params.get(n, {}))
        for n, p in aug_names
    )
    return cfg, AugmentationSpec(ops)


# ---------------------------------------------------------------------------
# Sample loading


def load_sample(entry: ManifestEntry, classes: int = 2) -> tuple[ImageTensor, LabelMask]:
    """Load an image and its mask; negatives decode as all-background."""
    image = load_image(entry.image)
    if entry.mask is None:
        mask = LabelMask(np.zeros((image.height, image.width), dtype=np.int64), classes=classes)
    else:
        mask = load_mask(entry.mask, classes=classes)
        if (mask.height, mask.width) != (image.height, image.width):
            raise InvalidInputError(
                f"mask {entry.mask} is {mask.height}×{mask.width} but image "
                f"{entry.image} is {image.height}×{image.width}"
            )
    return image, mask


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainResult:
    records: tuple[CheckpointRecord, ...]
    best: CheckpointRecord


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2, epoch]))


def _validation_confusion(
    net: SegmentationNetwork,
    entries: Sequence[ManifestEntry],
    cfg: TrainConfig,
) -> ConfusionCounts:
    classes = net.classes
    pooled = ConfusionCounts(np.zeros((classes, classes), dtype=np.int64))
    net.eval()
    ws = cfg.working_size
    batch_size = cfg.resolved_batch_size
    with torch.no_grad():
        for start in range(0, len(entries), batch_size):
            images, gts = [], []
            for entry in entries[start:start + batch_size]:
                image, mask = load_sample(entry, classes=classes)
                images.append(resize_image(image, ws, ws))
                gts.append(resize_mask_nearest(mask, ws, ws))
            logits = net(images_to_batch(images)).to(torch.float64)
            probs = torch.softmax(logits, dim=1).numpy()
            for prob, gt in zip(probs, gts):
                pred = decide_mask(ProbMap(prob))
                pooled = pooled + confusion(pred, gt, classes)
    return pooled


def train(
    net: SegmentationNetwork,
    manifest: DatasetManifest,
    cfg: TrainConfig,
    aug: AugmentationSpec | None = None,
    out_dir: Path | str = "checkpoints",
) -> TrainResult:
    """Run the full training loop and checkpoint every epoch.

    Returns all checkpoint records plus the one maximizing the selection
    metric (earliest epoch wins ties). ``records.json`` and a ``best.json``
    marker are written next to the per-epoch checkpoint directories.
    """
    train_entries = manifest.for_split("train")
    val_entries = manifest.for_split("validation")
    if not train_entries:
        raise InvalidInputError("manifest has no train entries")
    if not val_entries:
        raise InvalidInputError("manifest has no validation entries")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    dice_cfg = DiceConfig(target_class=cfg.target_class, smooth=cfg.dice_smooth)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.initial_lr)
    batch_size = cfg.resolved_batch_size
    ws = cfg.working_size

    records: list[CheckpointRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr

        order = _epoch_rng(cfg.seed, epoch).permutation(len(train_entries))
        losses = []
        net.train()
        for start in range(0, len(order), batch_size):
            batch_idx = order[start:start + batch_size]
            images, masks = [], []
            for idx in batch_idx:
                image, mask = load_sample(train_entries[idx], classes=net.classes)
                if aug is not None and aug.ops:
                    image, mask = augment(image, mask, aug, sample_rng(cfg.seed, epoch, int(idx)))
                images.append(resize_image(image, ws, ws))
                masks.append(resize_mask_nearest(mask, ws, ws))
            x = images_to_batch(images)
            t = torch.from_numpy(np.stack([m.data for m in masks]))
            try:
                losses.append(end_to_end_step(net, x, t, dice_cfg, optimizer))
            except TrainingError as exc:
                raise TrainingError(
                    f"epoch {epoch}, batch starting at sample {start}: {exc}"
                ) from exc

        val_conf = _validation_confusion(net, val_entries, cfg)
        val_iou = per_class_metrics(val_conf, cfg.target_class)["iou"]
        metrics = {"polyp_iou": val_iou, "train_loss": float(np.mean(losses))}
        record = save_checkpoint(out_dir / f"epoch_{epoch:03d}", net, epoch, metrics)
        records.append(record)

    best = max(records, key=lambda r: r.metrics[cfg.selection_metric])
    _write_run_summary(out_dir, records, best, cfg)
    return TrainResult(records=tuple(records), best=best)


def _write_run_summary(
    out_dir: Path,
    records: list[CheckpointRecord],
    best: CheckpointRecord,
    cfg: TrainConfig,
) -> None:
    payload = [
        {
            "epoch": r.epoch,
            "arch_id": r.arch_id,
            "metrics": r.metrics,
            "path": str(r.path),
        }
        for r in records
    ]
    (out_dir / RECORDS_FILE).write_text(json.dumps(payload, indent=2) + "\n")
    marker = {
        "epoch": best.epoch,
        "path": str(best.path),
        "metric": cfg.selection_metric,
        "value": best.metrics[cfg.selection_metric],
    }
    (out_dir / BEST_MARKER_FILE).write_text(json.dumps(marker, indent=2) + "\n")


def best_checkpoint_path(out_dir: Path | str) -> Path:
    """Resolve the best-checkpoint marker written by :func:`train`."""
    marker = Path(out_dir) / BEST_MARKER_FILE
    if not marker.is_file():
        raise InvalidInputError(f"no best-checkpoint marker found at {marker}")
    return Path(json.loads(marker.read_text())["path"])


# ---------------------------------------------------------------------------
# Prediction


def predict(
    checkpoint: Path | str | SegmentationNetwork,
    images: Sequence[ImageTensor],
    working_size: int = 256,
) -> list[LabelMask]:
    """Predict masks at each image's original resolution.

    Images are resized to the working size for the forward pass; the
    resulting probability map is resized back bilinearly before the final
    per-pixel decision, so output masks align with their inputs.
    """
    if working_size < 1:
        raise InvalidInputError(f"working size must be >= 1, got {working_size}")
    if isinstance(checkpoint, SegmentationNetwork):
        net = checkpoint
    else:
        net, _ = load_checkpoint(checkpoint)
    net.eval()
    masks = []
    with torch.no_grad():
        for image in images:
            resized = resize_image(image, working_size, working_size)
            logits = net(images_to_batch([resized]))[0]
            probs = ProbMap(torch.softmax(logits.to(torch.float64), dim=0).numpy())
            restored = resize_probmap(probs, image.height, image.width)
            masks.append(decide_mask(restored))
    return masks
