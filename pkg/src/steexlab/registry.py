"""Model and dataset registry rooted at the artifact home directory.

Entries record the checkpoint digest at registration time; loading verifies
the digest so silently swapped or corrupted checkpoints are rejected.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from .autoencoder import SegmenterModel, SemanticStack, load_autoencoder
from .checkpoints import checkpoint_digest, read_manifest
from .classifiers import DecisionModel
from .errors import RegistryError
from .synthetic import SceneDataset

MODEL_KINDS = ("segmenter", "autoencoder", "classifier", "embedder", "oracle")


@dataclass(frozen=True)
class ModelRegistryEntry:
    model_id: str
    kind: str
    path: str
    digest: str
    status: str = "ready"

    def to_jsonable(self) -> dict:
        return asdict(self)


class ModelRegistry:
    """Persisted id -> checkpoint mapping with integrity verification."""

    def __init__(self, home: str | Path):
        self.home = Path(home)
        self.home.mkdir(parents=True, exist_ok=True)
        self._path = self.home / "registry.json"
        self._lock = threading.Lock()
        self._cache: dict[str, object] = {}
        if not self._path.exists():
            self._write({"models": {}, "datasets": {}})

    def _read(self) -> dict:
        return json.loads(self._path.read_text())

    def _write(self, data: dict) -> None:
        tmp = self._path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True))
        tmp.replace(self._path)

    # -- models ------------------------------------------------------------

    def register_model(self, model_id: str, kind: str, path: str | Path) -> ModelRegistryEntry:
        if kind not in MODEL_KINDS:
            raise RegistryError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
        path = Path(path).resolve()
        manifest = read_manifest(path)
        if manifest["kind"] != kind:
            raise RegistryError(
                f"checkpoint at {path} is a {manifest['kind']!r}, registered as {kind!r}"
            )
        entry = ModelRegistryEntry(
            model_id=model_id, kind=kind, path=str(path), digest=checkpoint_digest(path)
        )
        with self._lock:
            data = self._read()
            if model_id in data["models"]:
                raise RegistryError(f"model id {model_id!r} already registered")
            data["models"][model_id] = entry.to_jsonable()
            self._write(data)
        return entry

    def list_models(self) -> list[ModelRegistryEntry]:
        data = self._read()
        return [ModelRegistryEntry(**e) for e in data["models"].values()]

    def get_model_entry(self, model_id: str) -> ModelRegistryEntry:
        data = self._read()
        if model_id not in data["models"]:
            raise RegistryError(f"unknown model id {model_id!r}")
        return ModelRegistryEntry(**data["models"][model_id])

    def load_model(self, model_id: str):
        """Load (and cache) the typed model behind an id, verifying integrity."""
        if model_id in self._cache:
            return self._cache[model_id]
        entry = self.get_model_entry(model_id)
        if checkpoint_digest(entry.path) != entry.digest:
            raise RegistryError(
                f"checkpoint digest mismatch for {model_id!r}; refusing to load"
            )
        if entry.kind == "segmenter":
            model = SegmenterModel.load(entry.path)
        elif entry.kind == "autoencoder":
            model = load_autoencoder(entry.path)
        elif entry.kind == "classifier":
            model = DecisionModel.load(entry.path)
        elif entry.kind == "embedder":
            from .evaluation import IdentityEmbedder

            model = IdentityEmbedder.load(entry.path)
        elif entry.kind == "oracle":
            from .evaluation import AttributeOracle

            model = AttributeOracle.load(entry.path)
        else:  # pragma: no cover - guarded at registration
            raise RegistryError(f"unknown kind {entry.kind!r}")
        with self._lock:
            self._cache[model_id] = model
        return model

    def load_stack(self, segmenter_id: str, autoencoder_id: str) -> SemanticStack:
        segmenter = self.load_model(segmenter_id)
        encoder, generator = self.load_model(autoencoder_id)
        if segmenter.profile.to_jsonable() != generator.profile.to_jsonable():
            raise RegistryError("segmenter and autoencoder profiles are incompatible")
        return SemanticStack(segmenter=segmenter, encoder=encoder, generator=generator)

    # -- datasets ----------------------------------------------------------

    def register_dataset(self, dataset_id: str, path: str | Path) -> dict:
        path = Path(path).resolve()
        SceneDataset.load(path)  # validates layout
        with self._lock:
            data = self._read()
            if dataset_id in data["datasets"]:
                raise RegistryError(f"dataset id {dataset_id!r} already registered")
            data["datasets"][dataset_id] = {"dataset_id": dataset_id, "path": str(path)}
            self._write(data)
        return data["datasets"][dataset_id]

    def load_dataset(self, dataset_id: str) -> SceneDataset:
        key = f"dataset:{dataset_id}"
        if key in self._cache:
            return self._cache[key]
        data = self._read()
        if dataset_id not in data["datasets"]:
            raise RegistryError(f"unknown dataset id {dataset_id!r}")
        dataset = SceneDataset.load(data["datasets"][dataset_id]["path"])
        with self._lock:
            self._cache[key] = dataset
        return dataset

    def resolve(self, id_or_path: str, kind: str):
        """Accept either a registered id or a checkpoint directory path."""
        candidate = Path(id_or_path)
        if candidate.is_dir() and (candidate / "manifest.json").exists():
            if kind == "segmenter":
                return SegmenterModel.load(candidate)
            if kind == "autoencoder":
                return load_autoencoder(candidate)
            if kind == "classifier":
                return DecisionModel.load(candidate)
            if kind == "embedder":
                from .evaluation import IdentityEmbedder

                return IdentityEmbedder.load(candidate)
            if kind == "oracle":
                from .evaluation import AttributeOracle

                return AttributeOracle.load(candidate)
            if kind == "dataset":
                return SceneDataset.load(candidate)
        if kind == "dataset":
            return self.load_dataset(id_or_path)
        model = self.load_model(id_or_path)
        entry = self.get_model_entry(id_or_path)
        if entry.kind != kind:
            raise RegistryError(f"{id_or_path!r} is a {entry.kind}, expected {kind}")
        return model
