"""Desk-scale polyp segmentation toolkit.

Composite triangular networks, ensemble fusion of frozen member models,
a single-class Dice objective, and a reproducible train/predict/evaluate
pipeline with a synthetic dataset generator.
"""

from .core import (
    ImageTensor,
    LabelMask,
    LogitMap,
    ProbMap,
    argmax_mask,
    decode_mask,
    encode_mask,
    resize_image,
    resize_mask_nearest,
    resize_probmap,
    softmax_over_classes,
)
from .loss import (
    DiceConfig,
    dice_loss_tensor,
    dice_score_tensor,
    single_channel_dice_loss,
    single_channel_dice_score,
)
from .backbones import (
    NetworkSpec,
    SegmentationNetwork,
    build_network,
    register_arch,
    registered_archs,
)
from .triunet import TriUNet, TriUNetSpec, build_triunet, end_to_end_step, triunet_spec
from .checkpoints import CheckpointRecord, load_checkpoint, save_checkpoint
from .ensemble import (
    EnsemblePredictor,
    EnsembleSpec,
    divergentnets_predict,
    fuse_hard,
    fuse_soft,
)
from .metrics import (
    ChallengeScore,
    ConfusionCounts,
    MetricsReport,
    all_class_metrics,
    challenge_score,
    confusion,
    evaluate_dataset,
    per_class_metrics,
)
from .augment import AugmentationOp, AugmentationSpec, augment, register_augmentation
from .pipeline import (
    DatasetManifest,
    ManifestEntry,
    TrainConfig,
    TrainResult,
    build_manifest,
    lr_at_epoch,
    predict,
    train,
)
from .synthgen import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "ImageTensor", "LabelMask", "LogitMap", "ProbMap",
    "softmax_over_classes", "argmax_mask", "encode_mask", "decode_mask",
    "resize_image", "resize_probmap", "resize_mask_nearest",
    "DiceConfig", "single_channel_dice_score", "single_channel_dice_loss",
    "dice_score_tensor", "dice_loss_tensor",
    "NetworkSpec", "SegmentationNetwork", "build_network", "register_arch",
    "registered_archs",
    "TriUNet", "TriUNetSpec", "triunet_spec", "build_triunet", "end_to_end_step",
    "CheckpointRecord", "save_checkpoint", "load_checkpoint",
    "EnsembleSpec", "EnsemblePredictor", "fuse_soft", "fuse_hard",
    "divergentnets_predict",
    "ConfusionCounts", "MetricsReport", "ChallengeScore", "confusion",
    "per_class_metrics", "all_class_metrics", "challenge_score", "evaluate_dataset",
    "AugmentationOp", "AugmentationSpec", "augment", "register_augmentation",
    "DatasetManifest", "ManifestEntry", "TrainConfig", "TrainResult",
    "build_manifest", "lr_at_epoch", "train", "predict",
    "SynthConfig", "generate",
]
