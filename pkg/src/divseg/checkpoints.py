"""Checkpoint directories: JSON metadata plus native tensor serialization.

Layout of a checkpoint directory:

    metadata.json   arch_id, spec fields, epoch, validation metrics, the
                    weights file name, and the ordered parameter names
    weights.pt      state dict saved with torch.save, keyed by those names

Composite networks store one flat state dict whose keys carry the subnet
prefixes (``net_a.``, ``net_b.``, ``net_c.``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .backbones import NetworkSpec, SegmentationNetwork, build_network
from .errors import CheckpointError
from .triunet import TriUNet, TriUNetSpec, build_triunet

METADATA_FILE = "metadata.json"
WEIGHTS_FILE = "weights.pt"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class CheckpointRecord:
    """Reference to trained weights plus the metrics that justified keeping them."""

    arch_id: str
    epoch: int
    metrics: dict[str, float] = field(default_factory=dict)
    path: Path | None = None


def _spec_to_dict(net: SegmentationNetwork) -> dict:
    if isinstance(net, TriUNet):
        s = net.triunet_spec
        return {
            "net_a": asdict(s.net_a),
            "net_b": asdict(s.net_b),
            "net_c": asdict(s.net_c),
        }
    return asdict(net.spec)


def _spec_from_dict(arch_id: str, spec: dict) -> NetworkSpec | TriUNetSpec:
    if arch_id == "triunet" and "net_a" in spec:
        return TriUNetSpec(
            net_a=NetworkSpec(**spec["net_a"]),
            net_b=NetworkSpec(**spec["net_b"]),
            net_c=NetworkSpec(**spec["net_c"]),
        )
    return NetworkSpec(**spec)


def save_checkpoint(
    directory: Path | str,
    net: SegmentationNetwork,
    epoch: int,
    metrics: dict[str, float] | None = None,
) -> CheckpointRecord:
    """Write a checkpoint directory and return its record."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = net.state_dict()
    metadata = {
        "format_version": FORMAT_VERSION,
        "arch_id": net.spec.arch_id,
        "spec": _spec_to_dict(net),
        "epoch": int(epoch),
        "metrics": dict(metrics or {}),
        "weights_file": WEIGHTS_FILE,
        "parameters": list(state.keys()),
    }
    try:
        (directory / METADATA_FILE).write_text(json.dumps(metadata, indent=2) + "\n")
        torch.save(state, directory / WEIGHTS_FILE)
    except OSError as exc:
        raise CheckpointError(f"could not write checkpoint to {directory}: {exc}") from exc
    return CheckpointRecord(
        arch_id=net.spec.arch_id, epoch=epoch, metrics=dict(metrics or {}), path=directory
    )


def read_metadata(directory: Path | str) -> dict:
    directory = Path(directory)
    meta_path = directory / METADATA_FILE
    if not meta_path.is_file():
        raise CheckpointError(f"checkpoint metadata not found: {meta_path}")
    try:
        return json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"could not read checkpoint metadata {meta_path}: {exc}") from exc


def load_checkpoint(directory: Path | str) -> tuple[SegmentationNetwork, CheckpointRecord]:
    """Rebuild the network from metadata and load its weights."""
    directory = Path(directory)
    meta = read_metadata(directory)
    try:
        arch_id = meta["arch_id"]
        spec = _spec_from_dict(arch_id, meta["spec"])
        weights_path = directory / meta.get("weights_file", WEIGHTS_FILE)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint metadata in {directory}: {exc}") from exc

    if isinstance(spec, TriUNetSpec):
        net = build_triunet(spec)
    else:
        net = build_network(spec)

    if not weights_path.is_file():
        raise CheckpointError(f"checkpoint weights not found: {weights_path}")
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state, strict=True)
    except (OSError, RuntimeError) as exc:
        raise CheckpointError(f"could not load weights from {weights_path}: {exc}") from exc

    record = CheckpointRecord(
        arch_id=arch_id,
        epoch=int(meta.get("epoch", 0)),
        metrics={k: float(v) for k, v in meta.get("metrics", {}).items()},
        path=directory,
    )
    return net, record
