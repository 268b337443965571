"""Command-line front end: generate data, train, predict, fuse, evaluate.

Exit codes: 0 on success, 1 for user errors (bad flags, missing paths,
malformed inputs) with a diagnostic naming the cause, 2 for internal faults.
Explicit flags override config-file values. When ``--out`` is omitted,
outputs land under ``$DIVSEG_OUT/<command>``.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pipeline, synthgen
from .backbones import NetworkSpec, build_network
from .core import ImageTensor, LabelMask, load_image, save_image, save_mask
from .ensemble import EnsemblePredictor, EnsembleSpec, HARD_VOTE, SOFT_MEAN
from .errors import ConfigurationError, DivSegError, InvalidInputError
from .metrics import evaluate_dataset

ENV_OUT = "DIVSEG_OUT"

ARCH_CHOICES = ("unet", "unetpp", "fpn", "deeplabv3", "deeplabv3plus", "triunet")

_OVERLAY_COLOR = np.array([1.0, 0.15, 0.15])
_OVERLAY_ALPHA = 0.45


@dataclass(frozen=True)
class CommandResult:
    """Exit code, human-readable summary, and an optional report path."""

    exit_code: int
    summary: str
    report_path: Path | None = None


class _Parser(argparse.ArgumentParser):
    # Flag errors are user errors: exit 1, not argparse's default 2.
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_out(out: str | None, command: str) -> Path:
    if out:
        return Path(out)
    root = os.environ.get(ENV_OUT)
    if root:
        return Path(root) / command
    raise InvalidInputError(f"no output directory: pass --out or set {ENV_OUT}")


def _input_images(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        # A dataset root lists its images under images/.
        directory = path / "images" if (path / "images").is_dir() else path
        files = sorted(
            p for p in directory.iterdir()
            if p.is_file() and p.suffix.lower() in pipeline.IMAGE_SUFFIXES
        )
        if not files:
            raise InvalidInputError(f"no image files found in {directory}")
        return files
    raise InvalidInputError(f"input path not found: {path}")


def _parse_splits(raw: str | None) -> dict[str, int] | None:
    if not raw:
        return None
    splits = {}
    for item in raw.split(","):
        name, _, count = item.partition("=")
        try:
            splits[name.strip()] = int(count)
        except ValueError:
            raise ConfigurationError(
                f"bad split entry {item!r}; expected name=count"
            ) from None
    return splits


def _overlay(image: ImageTensor, mask: LabelMask) -> ImageTensor:
    arr = np.array(image.data)
    fg = mask.data == 1
    arr[fg] = (1.0 - _OVERLAY_ALPHA) * arr[fg] + _OVERLAY_ALPHA * _OVERLAY_COLOR
    return ImageTensor(np.clip(arr, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Commands


_SYNTH_KEY_TYPES = {
    "count": int,
    "image_size": int,
    "seed": int,
    "max_blobs": int,
    "radius_min": float,
    "radius_max": float,
    "negative_fraction": float,
    "noise_amplitude": float,
}


def cmd_synth(args: argparse.Namespace) -> CommandResult:
    kwargs = {}
    if args.config:
        for key, raw in pipeline.load_key_value_config(args.config).items():
            if key not in _SYNTH_KEY_TYPES:
                raise ConfigurationError(
                    f"unknown synth config key {key!r}; known: {sorted(_SYNTH_KEY_TYPES)}"
                )
            try:
                kwargs[key] = _SYNTH_KEY_TYPES[key](raw)
            except ValueError:
                raise ConfigurationError(f"bad value {raw!r} for config key {key!r}") from None
    for key in ("count", "image_size", "seed", "negative_fraction"):
        value = getattr(args, key)
        if value is not None:
            kwargs[key] = value
    cfg = synthgen.SynthConfig(**kwargs)
    out = _resolve_out(args.out, "synth")
    manifest = synthgen.generate(cfg, out, splits=_parse_splits(args.splits))
    counts = manifest.counts()
    per_split = ", ".join(
        f"{s}: {c['total']} ({c['negative']} negative)"
        for s, c in counts.items() if c["total"]
    )
    return CommandResult(0, f"wrote {cfg.count} samples to {out} [{per_split}]",
                         report_path=out / pipeline.MANIFEST_FILE)


def cmd_train(args: argparse.Namespace) -> CommandResult:
    mapping = pipeline.load_key_value_config(args.config) if args.config else {}
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "working_size": args.working_size,
        "seed": args.seed,
        "lr_switch_epoch": args.lr_switch_epoch,
    }
    cfg, aug = pipeline.train_settings_from_mapping(mapping, overrides)
    manifest = pipeline.DatasetManifest.load(args.manifest)
    spec = NetworkSpec(
        arch_id=args.arch,
        in_channels=3,
        classes=args.classes,
        depth=args.depth,
        base_width=args.base_width,
        seed=cfg.seed,
    )
    net = build_network(spec)
    out = _resolve_out(args.out, f"train-{args.arch}")
    result = pipeline.train(net, manifest, cfg, aug=aug, out_dir=out)
    best = result.best
    return CommandResult(
        0,
        f"trained {args.arch} for {cfg.epochs} epochs; best epoch {best.epoch} "
        f"({cfg.selection_metric}={best.metrics[cfg.selection_metric]:.4f}) at {best.path}",
        report_path=out / pipeline.BEST_MARKER_FILE,
    )


def cmd_predict(args: argparse.Namespace) -> CommandResult:
    files = _input_images(Path(args.input))
    out = _resolve_out(args.out, "predict")
    out.mkdir(parents=True, exist_ok=True)
    images = [load_image(p) for p in files]
    masks = pipeline.predict(Path(args.checkpoint), images, working_size=args.working_size)
    for path, image, mask in zip(files, images, masks):
        save_mask(mask, out / f"{path.stem}.png")
        if args.overlay:
            save_image(_overlay(image, mask), out / f"{path.stem}_overlay.png")
    extra = " (+overlays)" if args.overlay else ""
    return CommandResult(0, f"wrote {len(files)} masks{extra} to {out}", report_path=out)


def cmd_ensemble_predict(args: argparse.Namespace) -> CommandResult:
    members = tuple(Path(m.strip()) for m in args.members.split(",") if m.strip())
    mode = SOFT_MEAN if args.mode == "soft" else HARD_VOTE
    spec = EnsembleSpec(members=members, fusion_mode=mode)
    predictor = EnsemblePredictor(spec, working_size=args.working_size)
    files = _input_images(Path(args.input))
    out = _resolve_out(args.out, "ensemble-predict")
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "ensemble.json")
    for path in files:
        mask = predictor.predict(load_image(path))
        save_mask(mask, out / f"{path.stem}.png")
    return CommandResult(
        0,
        f"wrote {len(files)} fused masks ({mode}, {len(members)} members) to {out}",
        report_path=out,
    )


_BINARY_CLASS_LABELS = {0: "background", 1: "polyp"}


def cmd_evaluate(args: argparse.Namespace) -> CommandResult:
    report = evaluate_dataset(args.pred, args.gt, classes=args.classes)
    lines = ["group            iou      f1      f2   recall    prec"]
    a = report.all_class
    lines.append(
        f"{'all_class':<12}{a['iou']:>8.4f}{a['f1']:>8.4f}{'-':>8}"
        f"{a['recall']:>9.4f}{a['precision']:>8.4f}"
    )
    for c in sorted(report.per_class):
        m = report.per_class[c]
        note = ""
        if args.classes == 2 and c in _BINARY_CLASS_LABELS:
            note = f"  ({_BINARY_CLASS_LABELS[c]})"
        lines.append(
            f"{f'class_{c}':<12}{m['iou']:>8.4f}{m['f1']:>8.4f}{m['f2']:>8.4f}"
            f"{m['recall']:>9.4f}{m['precision']:>8.4f}{note}"
        )
    lines.append(
        f"challenge score: mean={report.challenge.mean:.4f} sd={report.challenge.sd:.4f} "
        f"over {len(report.per_image)} images"
    )
    report_path = None
    if args.report:
        report_path = Path(args.report)
        report.write(report_path)
        lines.append(f"report written to {report_path} (+ per-image CSV)")
    return CommandResult(0, "\n".join(lines), report_path=report_path)


# ---------------------------------------------------------------------------
# Parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="divseg", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="flat key=value config file for the generator")
    p.add_argument("--out", help=f"output directory (default ${ENV_OUT}/synth)")
    p.add_argument("--count", type=int, help="number of samples (overrides config)")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--negative-fraction", dest="negative_fraction", type=float)
    p.add_argument("--splits", help="split counts, e.g. train=500,validation=100")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train one model and checkpoint every epoch")
    p.add_argument("--arch", choices=ARCH_CHOICES, required=True)
    p.add_argument("--manifest", required=True, help="dataset manifest (TSV)")
    p.add_argument("--config", help="flat key=value training config file")
    p.add_argument("--out", help=f"output directory (default ${ENV_OUT}/train-<arch>)")
    p.add_argument("--epochs", type=int, help="overrides config")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="overrides config")
    p.add_argument("--working-size", dest="working_size", type=int, help="overrides config")
    p.add_argument("--seed", type=int, help="overrides config")
    p.add_argument("--lr-switch-epoch", dest="lr_switch_epoch", type=int,
                   help="overrides config")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--base-width", dest="base_width", type=int, default=16)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="predict masks with one checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--out", help=f"output directory (default ${ENV_OUT}/predict)")
    p.add_argument("--working-size", dest="working_size", type=int, default=256)
    p.add_argument("--overlay", action="store_true",
                   help="also write inputs with the mask alpha-blended on top")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("ensemble-predict", help="fuse predictions from several checkpoints")
    p.add_argument("--members", required=True, help="comma-separated checkpoint directories")
    p.add_argument("--mode", choices=("soft", "hard"), default="soft",
                   help="soft = average probabilities; hard = majority vote")
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--out", help=f"output directory (default ${ENV_OUT}/ensemble-predict)")
    p.add_argument("--working-size", dest="working_size", type=int, default=256)
    p.set_defaults(fn=cmd_ensemble_predict)

    p = sub.add_parser("evaluate", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--report", help="write the JSON report (and per-image CSV) here")
    p.set_defaults(fn=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result: CommandResult = args.fn(args)
    except DivSegError as exc:
        print(f"divseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - internal faults
        print(f"divseg {args.command}: internal error: {exc}", file=sys.stderr)
        return 2
    if result.summary:
        print(result.summary)
    return result.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
