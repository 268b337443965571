"""Value types for images, label masks, and per-pixel class distributions.

All types are immutable after construction (the wrapped arrays are marked
read-only) and every operation here is a pure function, so they are safe to
share across worker threads. Class maps use a channel-major K×H×W layout
everywhere; images are H×W×C with values in [0, 1].
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError, MaskIOError

# Per-pixel class probabilities must sum to one within this tolerance.
PROB_SUM_TOL = 1e-6

# On-disk mask convention: 8-bit single-channel, background 0, foreground 255.
# Loading tolerates anti-aliased masks: any pixel >= 128 counts as foreground.
MASK_FOREGROUND_VALUE = 255
MASK_LOAD_THRESHOLD = 128


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageTensor:
    """An H×W×C image with finite float values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidInputError(f"image data must be H×W×C, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise InvalidInputError(f"image dims must all be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("image values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidInputError(
                f"image values must lie in [0, 1], got range [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMask:
    """An H×W integer class map with values in {0, ..., classes-1}."""

    data: np.ndarray
    classes: int = 2

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise InvalidInputError("mask values must be integers")
        arr = arr.astype(np.int64)
        if arr.ndim != 2:
            raise InvalidInputError(f"mask data must be H×W, got shape {arr.shape}")
        if self.classes < 2:
            raise InvalidInputError(f"mask needs >= 2 classes, got {self.classes}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.classes):
            raise InvalidInputError(
                f"mask values must lie in [0, {self.classes - 1}], "
                f"got range [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LogitMap:
    """A K×H×W map of unnormalized per-pixel class scores."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidInputError(f"logit data must be K×H×W, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise InvalidInputError(f"logit dims must all be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("logit values must be finite")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def classes(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ProbMap:
    """A K×H×W map of per-pixel class probabilities summing to one."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidInputError(f"probability data must be K×H×W, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise InvalidInputError(f"probability dims must all be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("probability values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidInputError("probability values must lie in [0, 1]")
        sums = arr.sum(axis=0)
        if np.abs(sums - 1.0).max() > PROB_SUM_TOL:
            raise InvalidInputError(
                f"per-pixel class probabilities must sum to 1 within {PROB_SUM_TOL}, "
                f"worst deviation {np.abs(sums - 1.0).max():.3e}"
            )
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def classes(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def softmax_over_classes(logits: LogitMap) -> ProbMap:
    """Exponential normalization over the class axis, independently per pixel."""
    arr = logits.data
    shifted = arr - arr.max(axis=0, keepdims=True)
    ex = np.exp(shifted)
    return ProbMap(ex / ex.sum(axis=0, keepdims=True))


def argmax_mask(probs: ProbMap) -> LabelMask:
    """Per-pixel class of maximal probability; ties break to the lowest index."""
    return LabelMask(np.argmax(probs.data, axis=0), classes=probs.classes)


def encode_mask(mask: LabelMask) -> bytes:
    """Encode a binary mask as an 8-bit single-channel PNG (0 / 255)."""
    if mask.classes != 2:
        raise InvalidInputError(f"mask files support exactly 2 classes, got {mask.classes}")
    arr = (mask.data.astype(np.uint8)) * MASK_FOREGROUND_VALUE
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask(data: bytes, classes: int = 2) -> LabelMask:
    """Decode mask bytes; any grayscale value >= 128 maps to foreground."""
    if classes != 2:
        raise InvalidInputError(f"mask files support exactly 2 classes, got {classes}")
    try:
        img = Image.open(io.BytesIO(data)).convert("L")
    except Exception as exc:
        raise MaskIOError(f"could not decode mask bytes: {exc}") from exc
    arr = np.asarray(img)
    return LabelMask((arr >= MASK_LOAD_THRESHOLD).astype(np.int64), classes=2)


def save_mask(mask: LabelMask, path: Path | str) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_mask(mask))
    except OSError as exc:
        raise MaskIOError(f"could not write mask file {path}: {exc}") from exc


def load_mask(path: Path | str, classes: int = 2) -> LabelMask:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MaskIOError(f"could not read mask file {path}: {exc}") from exc
    try:
        return decode_mask(data, classes=classes)
    except MaskIOError as exc:
        raise MaskIOError(f"could not decode mask file {path}: {exc}") from exc


def save_image(image: ImageTensor, path: Path | str) -> None:
    """Write an image as 8-bit RGB (or grayscale for single-channel input)."""
    path = Path(path)
    if image.channels not in (1, 3):
        raise InvalidInputError(
            f"image files support 1 or 3 channels, got {image.channels}"
        )
    arr = np.round(image.data * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    try:
        pil.save(path)
    except OSError as exc:
        raise MaskIOError(f"could not write image file {path}: {exc}") from exc


def load_image(path: Path | str) -> ImageTensor:
    """Load any common raster format as an H×W×3 image in [0, 1]."""
    path = Path(path)
    try:
        img = Image.open(path).convert("RGB")
    except Exception as exc:
        raise MaskIOError(f"could not read image file {path}: {exc}") from exc
    return ImageTensor(np.asarray(img, dtype=np.float64) / 255.0)


def _check_target_dims(height: int, width: int) -> None:
    if height < 1 or width < 1:
        raise InvalidInputError(f"target dims must be >= 1, got {height}×{width}")


def _bilinear_axis(arr: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    """Resample one axis with the half-pixel-center bilinear convention."""
    src = arr.shape[axis]
    if new_len == src:
        return arr
    pos = (np.arange(new_len) + 0.5) * (src / new_len) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    w = pos - lo
    shape = [1] * arr.ndim
    shape[axis] = new_len
    w = w.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1.0 - w) + np.take(arr, hi, axis=axis) * w


def _nearest_index(new_len: int, src: int) -> np.ndarray:
    # Source index floor((i + 0.5) * src / dst), clipped to the valid range.
    idx = np.floor((np.arange(new_len) + 0.5) * (src / new_len)).astype(np.int64)
    return np.clip(idx, 0, src - 1)


def resize_image(image: ImageTensor, height: int, width: int) -> ImageTensor:
    """Bilinear per-channel resize."""
    _check_target_dims(height, width)
    out = _bilinear_axis(image.data, height, axis=0)
    out = _bilinear_axis(out, width, axis=1)
    # Interpolation of values in [0, 1] stays in [0, 1] up to float error.
    return ImageTensor(np.clip(out, 0.0, 1.0))


def resize_probmap(probs: ProbMap, height: int, width: int) -> ProbMap:
    """Bilinear per-class resize, re-normalized per pixel.

    Bilinear interpolation preserves the per-pixel sum exactly in real
    arithmetic, so the division only cleans up floating-point drift.
    """
    _check_target_dims(height, width)
    if (height, width) == (probs.height, probs.width):
        return probs
    out = _bilinear_axis(probs.data, height, axis=1)
    out = _bilinear_axis(out, width, axis=2)
    out = np.clip(out, 0.0, 1.0)
    return ProbMap(out / out.sum(axis=0, keepdims=True))


def resize_mask_nearest(mask: LabelMask, height: int, width: int) -> LabelMask:
    """Nearest-neighbor resize; output values stay valid class indices."""
    _check_target_dims(height, width)
    rows = _nearest_index(height, mask.height)
    cols = _nearest_index(width, mask.width)
    return LabelMask(mask.data[np.ix_(rows, cols)], classes=mask.classes)
