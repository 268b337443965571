"""Pixel-level segmentation metrics: per-class and micro-averaged IoU/F1/
recall/precision, F2, and a per-image combined score with mean and standard
deviation.

Degenerate-count conventions (kept in one place, ``per_class_metrics``):
a class absent from both prediction and ground truth scores 1.0 on every
metric; any remaining 0/0 ratio (e.g. recall when the class was predicted
but absent from the ground truth) is defined as 0.0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import LabelMask, load_mask
from .errors import InvalidInputError, MaskIOError

PER_CLASS_METRIC_KEYS = ("iou", "f1", "f2", "precision", "recall")
ALL_CLASS_METRIC_KEYS = ("iou", "f1", "recall", "precision")

_MASK_SUFFIXES = {".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class ConfusionCounts:
    """A K×K pixel confusion matrix; rows are ground truth, columns predicted."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.matrix, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidInputError(f"confusion matrix must be K×K, got {arr.shape}")
        if arr.min() < 0:
            raise InvalidInputError("confusion counts must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "matrix", arr)

    @property
    def classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def tp(self, c: int) -> int:
        return int(self.matrix[c, c])

    def fp(self, c: int) -> int:
        return int(self.matrix[:, c].sum() - self.matrix[c, c])

    def fn(self, c: int) -> int:
        return int(self.matrix[c, :].sum() - self.matrix[c, c])

    def tn(self, c: int) -> int:
        return self.total - self.tp(c) - self.fp(c) - self.fn(c)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if self.classes != other.classes:
            raise InvalidInputError(
                f"cannot pool confusions with {self.classes} and {other.classes} classes"
            )
        return ConfusionCounts(self.matrix + other.matrix)


def confusion(pred: LabelMask, gt: LabelMask, classes: int) -> ConfusionCounts:
    """Exact pixel counting of prediction vs ground truth."""
    if pred.data.shape != gt.data.shape:
        raise InvalidInputError(
            f"prediction {pred.data.shape} and ground truth {gt.data.shape} differ in shape"
        )
    if pred.data.size and (pred.data.max() >= classes or gt.data.max() >= classes):
        raise InvalidInputError(f"mask values exceed the declared class count {classes}")
    flat = classes * gt.data.ravel() + pred.data.ravel()
    counts = np.bincount(flat, minlength=classes * classes)
    return ConfusionCounts(counts.reshape(classes, classes))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def per_class_metrics(counts: ConfusionCounts, c: int) -> dict[str, float]:
    """IoU, F1, F2, precision, and recall for one class.

    IoU = TP/(TP+FP+FN), precision = TP/(TP+FP), recall = TP/(TP+FN),
    F1 = 2TP/(2TP+FP+FN), F2 = 5TP/(5TP+4FN+FP).
    """
    if not 0 <= c < counts.classes:
        raise InvalidInputError(f"class {c} out of range for {counts.classes} classes")
    tp, fp, fn = counts.tp(c), counts.fp(c), counts.fn(c)
    if tp + fp + fn == 0:
        return {k: 1.0 for k in PER_CLASS_METRIC_KEYS}
    return {
        "iou": _ratio(tp, tp + fp + fn),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "f2": _ratio(5 * tp, 5 * tp + 4 * fn + fp),
        "precision": _ratio(tp, tp + fp),
        "recall": _ratio(tp, tp + fn),
    }


def all_class_metrics(counts: ConfusionCounts) -> dict[str, float]:
    """Micro average: confusion counts are pooled over classes first.

    Pooling makes precision, recall, and F1 all equal pixel accuracy.
    """
    tp = sum(counts.tp(c) for c in range(counts.classes))
    fp = sum(counts.fp(c) for c in range(counts.classes))
    fn = sum(counts.fn(c) for c in range(counts.classes))
    if tp + fp + fn == 0:
        return {k: 1.0 for k in ALL_CLASS_METRIC_KEYS}
    return {
        "iou": _ratio(tp, tp + fp + fn),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "recall": _ratio(tp, tp + fn),
        "precision": _ratio(tp, tp + fp),
    }


@dataclass(frozen=True)
class PerImageScore:
    """Target-class metrics of one image plus their combined score."""

    name: str
    f1: float
    f2: float
    precision: float
    recall: float

    @property
    def score(self) -> float:
        return (self.f1 + self.f2 + self.precision + self.recall) / 4.0


@dataclass(frozen=True)
class ChallengeScore:
    """Mean and population standard deviation of per-image combined scores."""

    mean: float
    sd: float


def challenge_score(per_image: list[PerImageScore]) -> ChallengeScore:
    """Average the per-image (F1 + F2 + PPV + recall)/4 scores."""
    if not per_image:
        raise InvalidInputError("challenge score needs at least one image")
    scores = np.array([s.score for s in per_image], dtype=np.float64)
    return ChallengeScore(mean=float(scores.mean()), sd=float(scores.std()))


@dataclass(frozen=True)
class MetricsReport:
    """Dataset-level metrics plus the per-image score distribution."""

    classes: int
    per_class: dict[int, dict[str, float]]
    all_class: dict[str, float]
    challenge: ChallengeScore
    per_image: tuple[PerImageScore, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "per_class": {str(c): m for c, m in self.per_class.items()},
            "all_class": dict(self.all_class),
            "challenge": {"mean": self.challenge.mean, "sd": self.challenge.sd},
        }

    def write(self, report_path: Path | str, csv_path: Path | str | None = None) -> None:
        """Write the report as JSON plus one CSV row per image."""
        report_path = Path(report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        if csv_path is None:
            csv_path = report_path.with_suffix(".csv")
        with Path(csv_path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "f1", "f2", "precision", "recall", "score"])
            for s in self.per_image:
                writer.writerow(
                    [s.name, f"{s.f1:.12g}", f"{s.f2:.12g}", f"{s.precision:.12g}",
                     f"{s.recall:.12g}", f"{s.score:.12g}"]
                )


def _mask_files(directory: Path) -> dict[str, Path]:
    files = {}
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in _MASK_SUFFIXES:
            if p.stem in files:
                raise MaskIOError(f"duplicate mask stem {p.stem!r} in {directory}")
            files[p.stem] = p
    return files


def evaluate_dataset(
    pred_dir: Path | str,
    gt_dir: Path | str,
    classes: int = 2,
    target_class: int = 1,
) -> MetricsReport:
    """Score a directory of predicted masks against ground-truth masks.

    Files pair by filename stem and every file must have a partner. Table
    metrics come from one confusion pooled over all images; the combined
    score is computed per image and then averaged.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise MaskIOError(f"not a directory: {d}")
    preds = _mask_files(pred_dir)
    gts = _mask_files(gt_dir)
    if not gts:
        raise MaskIOError(f"no mask files found in {gt_dir}")
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing or extra:
        raise MaskIOError(
            f"prediction/ground-truth stems do not match: "
            f"missing predictions {missing}, unmatched predictions {extra}"
        )

    pooled = ConfusionCounts(np.zeros((classes, classes), dtype=np.int64))
    per_image = []
    for stem in sorted(gts):
        pred = load_mask(preds[stem], classes=classes)
        gt = load_mask(gts[stem], classes=classes)
        conf = confusion(pred, gt, classes)
        pooled = pooled + conf
        m = per_class_metrics(conf, target_class)
        per_image.append(
            PerImageScore(
                name=stem, f1=m["f1"], f2=m["f2"],
                precision=m["precision"], recall=m["recall"],
            )
        )

    return MetricsReport(
        classes=classes,
        per_class={c: per_class_metrics(pooled, c) for c in range(classes)},
        all_class=all_class_metrics(pooled),
        challenge=challenge_score(per_image),
        per_image=tuple(per_image),
    )
