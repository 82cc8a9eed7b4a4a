"""Checkpoint directories: a JSON manifest plus a torch weight blob.

The manifest is the compatibility contract: loading verifies kind and
profile before weights are touched, and the registry verifies the digest
recorded at save time against the bytes on disk.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch

from .errors import RegistryError
from .profiles import DatasetProfile

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.pt"
CHECKPOINT_FORMAT = "steexlab.checkpoint/1"


def save_checkpoint(
    out_dir: str | Path,
    kind: str,
    profile: DatasetProfile,
    state_dict: dict,
    extra: dict | None = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights_path = out_dir / WEIGHTS_NAME
    torch.save(state_dict, weights_path)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "profile": profile.to_jsonable(),
    }
    manifest.update(extra or {})
    manifest["weights_sha256"] = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir


def read_manifest(ckpt_dir: str | Path) -> dict:
    path = Path(ckpt_dir) / MANIFEST_NAME
    if not path.exists():
        raise RegistryError(f"{ckpt_dir} is not a checkpoint (missing {MANIFEST_NAME})")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise RegistryError(f"unsupported checkpoint format {manifest.get('format')!r}")
    return manifest


def load_checkpoint(ckpt_dir: str | Path, expected_kind: str | None = None) -> tuple[dict, dict]:
    """Return (manifest, state_dict) after integrity checks."""
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir)
    if expected_kind is not None and manifest["kind"] != expected_kind:
        raise RegistryError(
            f"checkpoint kind {manifest['kind']!r} does not match expected {expected_kind!r}"
        )
    weights_path = ckpt_dir / WEIGHTS_NAME
    actual = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    if actual != manifest["weights_sha256"]:
        raise RegistryError(f"weight digest mismatch for {ckpt_dir}")
    state_dict = torch.load(weights_path, map_location="cpu", weights_only=True)
    return manifest, state_dict


def checkpoint_digest(ckpt_dir: str | Path) -> str:
    """Digest over manifest and weights; the registry's integrity token."""
    ckpt_dir = Path(ckpt_dir)
    digest = hashlib.sha256()
    digest.update((ckpt_dir / MANIFEST_NAME).read_bytes())
    digest.update((ckpt_dir / WEIGHTS_NAME).read_bytes())
    return digest.hexdigest()
